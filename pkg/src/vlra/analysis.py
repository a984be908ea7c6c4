"""Verification oracles and the update-alignment study.

Three kinds of ground truth live here: central-difference gradient checking
against the closed-form backward passes, closed-form least-squares floors for
restricted hypothesis classes (bias-only and summation-compression models),
and the PCA alignment report comparing principal directions of a weight
update with candidate compression vectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .adapters import (AdapterKind, AdapterState, METHOD_NAMES, backward,
                       kind_from_name, make_adapter, perturb_trainables)
from .errors import DegenerateInputError, ShapeError
from .linalg import (STREAM_ADAPTER, STREAM_ALIGNMENT, STREAM_BASE, STREAM_DATA,
                     Rng, as_matrix, as_vector, check_finite, svd)
from .model import AdaptedLinear, FrozenLinear, attach, make_mlp

ALIGNMENT_CSV_HEADER = "layer,pc_index,singular_value,candidate,abs_cosine"


def wrap_adapter(state: AdapterState, W0, beta0) -> AdaptedLinear:
    """Adapter plus frozen layer as a checkable single-layer model."""
    return AdaptedLinear(FrozenLinear(W0, beta0), adapter=state)


def fd_gradcheck(target, x, g_out, h: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``target`` is anything exposing ``trainables()``, ``eval_vector(x)`` and
    ``grads_vector(x, g_out)`` (AdaptedLinear, ToyNet). The probed scalar is
    ``g_out . forward(x)``, whose exact gradient is what backward computes.
    Relative error uses denominator max(1e-8, |analytic| + |numeric|).
    """
    if h <= 0:
        raise ValueError(f"h must be > 0, got {h}")
    x = as_vector(x)
    g = as_vector(g_out)
    params = target.trainables()
    analytic = target.grads_vector(x, g)

    def loss() -> float:
        return float(g @ target.eval_vector(x))

    worst = 0.0
    for name, p in params.items():
        flat = p.reshape(-1)
        ana = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = loss()
            flat[i] = orig - h
            lm = loss()
            flat[i] = orig
            num = (lp - lm) / (2.0 * h)
            err = abs(ana[i] - num) / max(1e-8, abs(ana[i]) + abs(num))
            worst = max(worst, err)
    return worst


class _FrozenNormDora:
    """Checkable model whose forward pins the row norms at their current value.

    The detached dora variant defines its gradients against exactly this map
    (norms as constants), so finite differences of the live forward would
    wrongly flag it; this wrapper is its matching oracle.
    """

    def __init__(self, state: AdapterState, W0, beta0):
        self.state = state
        self.W0 = as_matrix(W0)
        self.beta0 = as_vector(beta0)
        V = self.W0 + state.kind.scale * (state.trainables["B"] @ state.trainables["A"])
        self.norms = np.maximum(np.linalg.norm(V, axis=1), 1e-300)

    def trainables(self):
        return self.state.trainables

    def eval_vector(self, x):
        t = self.state.trainables
        V = self.W0 + self.state.kind.scale * (t["B"] @ t["A"])
        return self.beta0 + (t["magnitude"] / self.norms) * (V @ x)

    def grads_vector(self, x, g_out):
        return backward(self.state, self.W0, x, g_out, self.beta0).grads


def _fd_certifiable(target, x, g, h: float) -> bool:
    """Whether central differences can resolve every gradient coordinate.

    The probed scalar carries quantization noise of a few ulps, so the
    numeric derivative is only meaningful down to about eps*|loss|/(2h).
    A state whose smallest (nonzero) analytic coordinate sits below that
    resolution times the 1e-6 certification bar cannot be checked by this
    tool at all (e.g. a saturated-GELU path with derivative 1e-10); the
    suite redraws such states instead of reporting vacuous mismatches.
    """
    loss_scale = max(abs(float(g @ target.eval_vector(x))), 1.0)
    floor = 32.0 * np.finfo(float).eps * loss_scale / (2.0 * h) / 1e-6
    for arr in target.grads_vector(x, g).values():
        mags = np.abs(arr.reshape(-1))
        if np.any(mags < floor):
            return False
    return True


def gradcheck_suite(k: int = 7, d: int = 5, n_states: int = 3, seed: int = 0,
                    h: float = 1e-5) -> dict[str, float]:
    """Finite-difference check for every method plus a full two-layer net.

    Each entry is the worst relative error over ``n_states`` randomly
    perturbed parameter states; values at or below 1e-6 mean the analytic
    backward passes are trustworthy. The default step 1e-5 suits the O(1)
    loss scale probed here (roundoff ~1e-16*|loss|/h against ~h^2
    truncation), and states outside the tool's resolution are redrawn
    deterministically (see :func:`_fd_certifiable`).
    """
    base_rng = Rng(seed, STREAM_BASE)
    W0 = base_rng.normal_matrix(d, k) / np.sqrt(k)
    beta0 = 0.5 * base_rng.normal(d)
    out: dict[str, float] = {}
    names = METHOD_NAMES + ("dora_detached",)
    for name in names:
        detached = name == "dora_detached"
        if detached:
            kind = AdapterKind("dora", dora_detach_norm=True)
        else:
            kind = kind_from_name(name)

        def adapter_target(salt: int):
            state = make_adapter(kind, k, d, Rng(seed + salt, STREAM_ADAPTER), W0=W0)
            perturb_trainables(state, Rng(seed + 17 * salt + 1, STREAM_ADAPTER), 0.4)
            data_rng = Rng(seed + salt, STREAM_DATA)
            target = _FrozenNormDora(state, W0, beta0) if detached else wrap_adapter(state, W0, beta0)
            return target, data_rng.normal(k), data_rng.normal(d)

        out[name] = _run_states(adapter_target, n_states, h)

    def net_target(salt: int):
        net = make_mlp(k, 2 * d, d, Rng(seed + salt, STREAM_BASE), activation="gelu", norm=True)
        attach(net, kind_from_name("ilora"), {"biases", "gamma", "norms"},
               Rng(seed + salt, STREAM_ADAPTER))
        prng = Rng(seed + 31 * salt + 3, STREAM_ADAPTER)
        for arr in net.trainables().values():
            arr += 0.3 * prng.normal(arr.size).reshape(arr.shape)
        data_rng = Rng(seed + salt, STREAM_DATA)
        return net, data_rng.normal(k), data_rng.normal(d)

    out["toynet"] = _run_states(net_target, n_states, h)
    return out


def _run_states(make_target, n_states: int, h: float) -> float:
    worst = 0.0
    accepted = 0
    salt = 0
    budget = 100 * n_states
    while accepted < n_states and salt < budget:
        target, x, g = make_target(salt)
        salt += 1
        if not _fd_certifiable(target, x, g, h):
            continue
        worst = max(worst, fd_gradcheck(target, x, g, h))
        accepted += 1
    if accepted < n_states:
        raise RuntimeError("could not draw enough FD-resolvable probe states")
    return worst


@dataclass
class AlignmentReport:
    """Cosine alignment of candidate compression vectors with update PCs.

    Principal components are the right singular vectors of the weight update
    (compression acts on the input side), ordered by descending singular
    value; every cosine is an absolute value in [0, 1].
    """

    layer: str
    singular_values: np.ndarray
    cosines: dict[str, np.ndarray]


def pca_alignment(dW, learned_a=None, rng: Rng | None = None,
                  layer: str = "layer0") -> AlignmentReport:
    """SVD the update and report |cos| between each PC and each candidate.

    Candidates: ``ones`` (normalized summation direction), ``random`` (a
    seeded unit vector from the alignment stream), and ``learned`` when a
    learned compression row is supplied. A zero update yields all-zero
    singular values and cosines by convention.
    """
    dW = as_matrix(dW)
    check_finite(dW, "pca_alignment input")
    d, k = dW.shape
    n_pc = min(d, k)
    if rng is None:
        rng = Rng(0, STREAM_ALIGNMENT)
    candidates: dict[str, np.ndarray] = {
        "ones": np.ones(k) / np.sqrt(k),
        "random": rng.unit_vector(k),
    }
    if learned_a is not None:
        a = as_vector(learned_a)
        if a.shape[0] != k:
            raise ShapeError(f"learned vector len {a.shape[0]} != k={k}")
        nrm = np.linalg.norm(a)
        if nrm == 0.0:
            raise DegenerateInputError("learned compression vector is zero")
        candidates["learned"] = a / nrm

    if float(np.linalg.norm(dW)) == 0.0:
        zeros = np.zeros(n_pc)
        return AlignmentReport(layer, zeros, {name: zeros.copy() for name in candidates})

    _, S, V = svd(dW)
    cosines = {name: np.clip(np.abs(V.T @ cand), 0.0, 1.0) for name, cand in candidates.items()}
    return AlignmentReport(layer, S, cosines)


def alignment_rows(report: AlignmentReport) -> list[tuple]:
    rows = []
    for name, cos in report.cosines.items():
        for i, (sv, c) in enumerate(zip(report.singular_values, cos)):
            rows.append((report.layer, i, float(sv), name, float(c)))
    return rows


def write_alignment_csv(reports, path) -> None:
    lines = [ALIGNMENT_CSV_HEADER]
    for report in reports:
        for layer, idx, sv, name, c in alignment_rows(report):
            lines.append(f"{layer},{idx},{sv:.6g},{name},{c:.6g}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def _residual(X, Y, W0) -> np.ndarray:
    X = as_matrix(X)
    Y = as_matrix(Y)
    W0 = as_matrix(W0)
    if Y.shape[0] != X.shape[0]:
        raise ShapeError(f"X has {X.shape[0]} samples, Y has {Y.shape[0]}")
    if W0.shape != (Y.shape[1], X.shape[1]):
        raise ShapeError(f"W0 shape {W0.shape} incompatible with data")
    return Y - X @ W0.T


def bitfit_floor_oracle(X, Y, W0) -> float:
    """Minimum MSE over bias-only models: the optimal bias is the mean residual.

    Anything the bias cannot track (input-dependent structure, noise) stays
    in the floor, which is why input-varying shifts bound bias fine-tuning
    away from zero loss.
    """
    R = _residual(X, Y, W0)
    centered = R - R.mean(axis=0)
    return float((centered**2).mean())


def ones_ls_oracle(X, Y, W0) -> tuple[np.ndarray, float]:
    """Closed-form least squares for the summation-compression model.

    Fits ``residual ~ outer(s, b)`` with s the per-sample feature sums; the
    per-output optimum is b = R^T s / (s . s). Returns (b_hat, mse). This is
    the exact optimum of the summation adapter's hypothesis class, so its mse
    lower-bounds anything gradient training can reach on the same data.
    """
    R = _residual(X, Y, W0)
    s = as_matrix(X).sum(axis=1)
    ss = float(s @ s)
    if ss == 0.0:
        raise DegenerateInputError("per-sample feature sums are all zero")
    b_hat = (R.T @ s) / ss
    mse = float(((R - np.outer(s, b_hat)) ** 2).mean())
    return b_hat, mse
