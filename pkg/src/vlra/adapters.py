"""Very-low-rank fine-tuning adapters over a frozen linear layer.

Nine methods share one interface: construct with :func:`make_adapter`, run
:func:`forward` / :func:`backward` (closed-form gradients, no autograd), fold
into the base weights with :func:`merge`, and account for cost with
:func:`param_count` / :func:`flop_count`.

With a frozen base ``base = W0 @ x + beta0`` (widths k -> d) the per-kind
output is::

    ilora    base + b * sum(x)                       b (d,) zero at init
    lora     base + scale * B @ (A @ x)              A (r,k) random, B (d,r) zero
    dora     beta0 + (m / n) * (V @ x)               V = W0 + scale*B@A,
                                                     n = per-output-row norms of V,
                                                     m (d,) = row norms of W0 at init
    vera     base + b * (B @ (dvec * (A @ x)))       A, B frozen random; dvec=0.1, b=0
    mora1    base + tile(M @ groupsum(x))            M (rh,rh) zero
    mora6    base + tile(flatten(M @ rope(chunk(x)))) M (rh,rh) zero
    bitfit   base + beta                             beta (d,) zero
    difffit  gamma * (base + beta)                   gamma=1, beta=0
    all      base + dW @ x + dbeta                   dense deltas, zero at init

Every kind therefore reproduces the base layer exactly at construction time
("zero shift"), and every kind is linear in ``x`` once its parameters are
fixed, so the update always merges into a plain ``(W_ft, beta_ft)`` pair.

Both mora types use the square rank ``rh = round(sqrt(d))`` (banker's
rounding), the minimal-parameter setting. ``mora1`` compresses by summing
within ``rh`` contiguous input groups of size ``ceil(k/rh)`` (last group
smaller) and decompresses by tiling the ``rh`` outputs cyclically to length
``d``. ``mora6`` zero-pads ``x`` to ``ceil(k/rh)*rh``, splits it into
``ceil(k/rh)`` chunks of length ``rh``, rotates each chunk pairwise by angles
``pos / 10000^(2p/rh)`` (pos = chunk index, trailing odd element unrotated),
applies ``M`` per chunk, re-flattens, and tiles/truncates to length ``d``.

``ilora`` can swap its fixed summation for a frozen random direction with the
same norm sqrt(k) (``compression="random"``): same trainable count, so the
comparison isolates the compression direction from its scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .linalg import STREAM_COMPRESSION, STREAM_VERA, Rng, as_matrix, as_vector

KINDS = ("ilora", "lora", "dora", "vera", "mora1", "mora6", "bitfit", "difffit", "all")
METHOD_NAMES = KINDS + ("ilora_rand",)

_ROPE_BASE = 10000.0


@dataclass(frozen=True)
class AdapterKind:
    """Method selector plus its hyperparameters.

    rank applies to lora/dora/vera (default 1, the minimal setting) and is
    ignored elsewhere; mora's square rank is always derived from d. scale
    multiplies the low-rank shift of lora/dora. compression picks ilora's
    fixed direction. dora_detach_norm switches dora's gradient to treat the
    row norms as constants (the memory-saving variant); default is the full
    gradient through the normalization.
    """

    tag: str
    rank: int = 1
    scale: float = 1.0
    compression: str = "sum"
    dora_detach_norm: bool = False

    def __post_init__(self):
        if self.tag not in KINDS:
            raise ValueError(f"unknown adapter kind {self.tag!r}, expected one of {KINDS}")
        if self.rank < 1:
            raise ValueError(f"rank must be >= 1, got {self.rank}")
        if self.compression not in ("sum", "random"):
            raise ValueError(f"compression must be 'sum' or 'random', got {self.compression!r}")


def kind_from_name(name: str) -> AdapterKind:
    """Benchmark method name to kind; 'ilora_rand' is the random-direction ablation."""
    if name == "ilora_rand":
        return AdapterKind("ilora", compression="random")
    if name in KINDS:
        return AdapterKind(name)
    raise ValueError(f"unknown method {name!r}, expected one of {METHOD_NAMES}")


@dataclass
class AdapterState:
    """Trainable parameters plus frozen constants of one attached adapter."""

    kind: AdapterKind
    k: int
    d: int
    trainables: dict[str, np.ndarray]
    frozen: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class GradBundle:
    """Gradients mirroring ``trainables`` plus the gradient w.r.t. the input."""

    grads: dict[str, np.ndarray]
    g_in: np.ndarray


def mora_rank(k: int, d: int, r: int = 1, very_low: bool = False) -> int:
    """Square rank of the mora methods.

    General rule round(sqrt((k+d)*r)); the very-low-parameter setting used
    throughout this library is round(sqrt(d)). Rounding is half-to-even.
    """
    if r < 1:
        raise ValueError(f"r must be >= 1, got {r}")
    if very_low:
        return max(1, round(math.sqrt(d)))
    return max(1, round(math.sqrt((k + d) * r)))


def param_count(kind: AdapterKind, k: int, d: int) -> int:
    """Exact trainable-parameter count of one adapted linear layer."""
    r = kind.rank
    counts = {
        "ilora": d,
        "lora": r * (k + d),
        "dora": d + r * (k + d),
        "vera": r + d,
        "mora1": mora_rank(k, d, very_low=True) ** 2,
        "mora6": mora_rank(k, d, very_low=True) ** 2,
        "bitfit": d,
        "difffit": 2 * d,
        "all": k * d + d,
    }
    return counts[kind.tag]


def _mora_layout(k: int, d: int) -> tuple[int, int, int]:
    """(rh, ceil(k/rh), nonempty-group count).

    ceil(k/rh) is type 1's contiguous group size and, equally, type 6's
    count of length-rh chunks; the last element is how many of type 1's rh
    group slots are actually populated.
    """
    rh = mora_rank(k, d, very_low=True)
    chunk = -(-k // rh)  # ceil
    return rh, chunk, -(-k // chunk)


def _rope_tables(rh: int, n_cols: int) -> tuple[np.ndarray, np.ndarray]:
    """cos/sin tables of shape (n_cols, rh//2); angle = pos / base^(2p/rh)."""
    pairs = rh // 2
    pos = np.arange(n_cols, dtype=float)[:, None]
    freq = _ROPE_BASE ** (-2.0 * np.arange(pairs, dtype=float)[None, :] / rh)
    ang = pos * freq
    return np.cos(ang), np.sin(ang)


def _rope_rotate(chunks: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Rotate adjacent pairs of each chunk row; chunks has shape (..., n_cols, rh)."""
    rh = chunks.shape[-1]
    pairs = rh // 2
    if pairs == 0:
        return chunks
    cos, sin = _rope_tables(rh, chunks.shape[-2])
    if inverse:
        sin = -sin
    out = chunks.copy()
    even = chunks[..., 0 : 2 * pairs : 2]
    odd = chunks[..., 1 : 2 * pairs : 2]
    out[..., 0 : 2 * pairs : 2] = cos * even - sin * odd
    out[..., 1 : 2 * pairs : 2] = sin * even + cos * odd
    return out


def _tile_to(v: np.ndarray, n: int) -> np.ndarray:
    """Cyclically tile the last axis to length n (plain truncation when longer)."""
    idx = np.arange(n) % v.shape[-1]
    return v[..., idx]


def _untile(g: np.ndarray, period: int) -> np.ndarray:
    """Adjoint of :func:`_tile_to`: sum entries that map to the same source slot."""
    n = g.shape[-1]
    reps = -(-n // period)
    padded = np.zeros(g.shape[:-1] + (reps * period,))
    padded[..., :n] = g
    return padded.reshape(g.shape[:-1] + (reps, period)).sum(axis=-2)


def _group_sum(X: np.ndarray, k: int, rh: int, chunk: int) -> np.ndarray:
    """Sum within contiguous input groups; output padded with zeros to rh slots."""
    offsets = np.arange(0, k, chunk)
    sums = np.add.reduceat(X, offsets, axis=-1)
    if sums.shape[-1] < rh:
        padded = np.zeros(X.shape[:-1] + (rh,))
        padded[..., : sums.shape[-1]] = sums
        return padded
    return sums


def _chunked(X: np.ndarray, k: int, rh: int, n_cols: int) -> np.ndarray:
    """Zero-pad the last axis to n_cols*rh and reshape to (..., n_cols, rh)."""
    padded = np.zeros(X.shape[:-1] + (n_cols * rh,))
    padded[..., :k] = X
    return padded.reshape(X.shape[:-1] + (n_cols, rh))


def make_adapter(kind: AdapterKind, k: int, d: int, rng: Rng, W0=None) -> AdapterState:
    """Build an adapter in its zero-shift configuration.

    VeRA's frozen projections and the random-compression direction come from
    their own PRNG streams derived from ``rng.seed``, so same-shape layers of
    one model share VeRA projections and no method perturbs another's draws.
    ``W0`` is required for dora (its magnitude starts at the row norms of the
    frozen weights) and ignored otherwise.
    """
    if k < 1 or d < 1:
        raise ValueError(f"widths must be >= 1, got k={k}, d={d}")
    r = kind.rank
    trainables: dict[str, np.ndarray] = {}
    frozen: dict[str, np.ndarray] = {}

    if kind.tag == "ilora":
        trainables["b"] = np.zeros(d)
        if kind.compression == "random":
            crng = rng.spawn(STREAM_COMPRESSION)
            frozen["compress"] = crng.unit_vector(k) * math.sqrt(k)
    elif kind.tag == "lora":
        trainables["A"] = rng.normal_matrix(r, k) / math.sqrt(k)
        trainables["B"] = np.zeros((d, r))
    elif kind.tag == "dora":
        if W0 is None:
            raise ValueError("dora needs the frozen weights W0 to initialize its magnitude")
        W0 = as_matrix(W0)
        if W0.shape != (d, k):
            raise ShapeError(f"W0 shape {W0.shape} != ({d}, {k})")
        trainables["A"] = rng.normal_matrix(r, k) / math.sqrt(k)
        trainables["B"] = np.zeros((d, r))
        trainables["magnitude"] = np.linalg.norm(W0, axis=1)
    elif kind.tag == "vera":
        vr = rng.spawn(STREAM_VERA)
        frozen["A"] = vr.normal_matrix(r, k) / math.sqrt(k)
        frozen["B"] = vr.normal_matrix(d, r) / math.sqrt(r)
        trainables["d_vec"] = np.full(r, 0.1)
        trainables["b"] = np.zeros(d)
    elif kind.tag in ("mora1", "mora6"):
        rh = mora_rank(k, d, very_low=True)
        trainables["M"] = np.zeros((rh, rh))
    elif kind.tag == "bitfit":
        trainables["beta"] = np.zeros(d)
    elif kind.tag == "difffit":
        trainables["gamma"] = np.ones(d)
        trainables["beta"] = np.zeros(d)
    elif kind.tag == "all":
        trainables["delta_W"] = np.zeros((d, k))
        trainables["delta_beta"] = np.zeros(d)

    state = AdapterState(kind=kind, k=k, d=d, trainables=trainables, frozen=frozen)
    assert sum(v.size for v in trainables.values()) == param_count(kind, k, d)
    return state


def _check_layer_shapes(a: AdapterState, W0: np.ndarray, beta0: np.ndarray) -> None:
    if W0.shape != (a.d, a.k):
        raise ShapeError(f"W0 shape {W0.shape} != ({a.d}, {a.k})")
    if beta0.shape != (a.d,):
        raise ShapeError(f"beta0 shape {beta0.shape} != ({a.d},)")


def _ilora_direction(a: AdapterState) -> np.ndarray | None:
    """None means plain summation (implicit all-ones direction)."""
    return a.frozen.get("compress")


def forward(a: AdapterState, W0, beta0, x) -> np.ndarray:
    """Adapted layer output for a single input vector."""
    W0 = as_matrix(W0)
    beta0 = as_vector(beta0)
    x = as_vector(x)
    _check_layer_shapes(a, W0, beta0)
    if x.shape != (a.k,):
        raise ShapeError(f"x shape {x.shape} != ({a.k},)")

    t = a.trainables
    tag = a.kind.tag
    if tag == "dora":
        V = W0 + a.kind.scale * (t["B"] @ t["A"])
        n = np.maximum(np.linalg.norm(V, axis=1), 1e-300)
        return beta0 + (t["magnitude"] / n) * (V @ x)
    if tag == "difffit":
        return t["gamma"] * (W0 @ x + beta0 + t["beta"])

    base = W0 @ x + beta0
    if tag == "ilora":
        direction = _ilora_direction(a)
        s = float(x.sum()) if direction is None else float(direction @ x)
        return base + t["b"] * s
    if tag == "lora":
        return base + a.kind.scale * (t["B"] @ (t["A"] @ x))
    if tag == "vera":
        return base + t["b"] * (a.frozen["B"] @ (t["d_vec"] * (a.frozen["A"] @ x)))
    if tag == "mora1":
        rh, chunk, _ = _mora_layout(a.k, a.d)
        y = t["M"] @ _group_sum(x, a.k, rh, chunk)
        return base + _tile_to(y, a.d)
    if tag == "mora6":
        rh, n_cols, _ = _mora_layout(a.k, a.d)
        rot = _rope_rotate(_chunked(x, a.k, rh, n_cols))
        flat = (rot @ t["M"].T).reshape(n_cols * rh)
        return base + _tile_to(flat, a.d)
    if tag == "bitfit":
        return base + t["beta"]
    if tag == "all":
        return base + t["delta_W"] @ x + t["delta_beta"]
    raise AssertionError(tag)


def backward(a: AdapterState, W0, x, g_out, beta0=None) -> GradBundle:
    """Closed-form gradients of the forward map.

    Returns d(loss)/d(each trainable) and d(loss)/d(x) for upstream gradient
    ``g_out`` = d(loss)/d(output). ``beta0`` only affects difffit (its gamma
    gradient needs the full pre-scale activation); it defaults to zeros.
    """
    W0 = as_matrix(W0)
    x = as_vector(x)
    g = as_vector(g_out)
    if x.shape != (a.k,):
        raise ShapeError(f"x shape {x.shape} != ({a.k},)")
    if g.shape != (a.d,):
        raise ShapeError(f"g_out shape {g.shape} != ({a.d},)")
    if W0.shape != (a.d, a.k):
        raise ShapeError(f"W0 shape {W0.shape} != ({a.d}, {a.k})")

    t = a.trainables
    tag = a.kind.tag
    grads: dict[str, np.ndarray] = {}

    if tag == "ilora":
        direction = _ilora_direction(a)
        s = float(x.sum()) if direction is None else float(direction @ x)
        grads["b"] = g * s
        pull = float(t["b"] @ g)
        # the all-ones direction broadcasts as a scalar add
        extra = pull if direction is None else direction * pull
        return GradBundle(grads, W0.T @ g + extra)

    if tag == "lora":
        scale = a.kind.scale
        z = t["A"] @ x
        gz = scale * (t["B"].T @ g)
        grads["B"] = scale * np.outer(g, z)
        grads["A"] = np.outer(gz, x)
        return GradBundle(grads, W0.T @ g + t["A"].T @ gz)

    if tag == "dora":
        scale = a.kind.scale
        V = W0 + scale * (t["B"] @ t["A"])
        n = np.maximum(np.linalg.norm(V, axis=1), 1e-300)
        u = (V @ x) / n
        c = g * t["magnitude"]
        grads["magnitude"] = g * u
        dV = np.outer(c / n, x)
        if not a.kind.dora_detach_norm:
            dV -= ((c * u) / n**2)[:, None] * V
        grads["B"] = scale * (dV @ t["A"].T)
        grads["A"] = scale * (t["B"].T @ dV)
        return GradBundle(grads, V.T @ (c / n))

    if tag == "vera":
        A, B = a.frozen["A"], a.frozen["B"]
        z = A @ x
        y = B @ (t["d_vec"] * z)
        gw = B.T @ (g * t["b"])
        grads["b"] = g * y
        grads["d_vec"] = z * gw
        return GradBundle(grads, W0.T @ g + A.T @ (t["d_vec"] * gw))

    if tag == "mora1":
        rh, chunk, _ = _mora_layout(a.k, a.d)
        z = _group_sum(x, a.k, rh, chunk)
        gy = _untile(g, rh)
        grads["M"] = np.outer(gy, z)
        gz = t["M"].T @ gy
        return GradBundle(grads, W0.T @ g + gz[np.arange(a.k) // chunk])

    if tag == "mora6":
        rh, n_cols, _ = _mora_layout(a.k, a.d)
        rot = _rope_rotate(_chunked(x, a.k, rh, n_cols))
        g_rows = _untile(g, n_cols * rh).reshape(n_cols, rh)
        grads["M"] = g_rows.T @ rot
        g_rot = g_rows @ t["M"]
        g_pad = _rope_rotate(g_rot, inverse=True).reshape(n_cols * rh)
        return GradBundle(grads, W0.T @ g + g_pad[: a.k])

    if tag == "bitfit":
        grads["beta"] = g.copy()
        return GradBundle(grads, W0.T @ g)

    if tag == "difffit":
        b0 = np.zeros(a.d) if beta0 is None else as_vector(beta0)
        h = W0 @ x + b0 + t["beta"]
        grads["gamma"] = g * h
        grads["beta"] = g * t["gamma"]
        return GradBundle(grads, W0.T @ (g * t["gamma"]))

    if tag == "all":
        grads["delta_W"] = np.outer(g, x)
        grads["delta_beta"] = g.copy()
        return GradBundle(grads, (W0 + t["delta_W"]).T @ g)

    raise AssertionError(tag)


def merge(a: AdapterState, W0, beta0) -> tuple[np.ndarray, np.ndarray]:
    """Fold the adapter into explicit fine-tuned weights.

    For every kind and every x, ``W_ft @ x + beta_ft`` equals the adapted
    forward pass. The mora composite maps are materialized by pushing the
    identity basis through the shift (exact, since the shift is linear).
    """
    W0 = as_matrix(W0)
    beta0 = as_vector(beta0)
    _check_layer_shapes(a, W0, beta0)
    t = a.trainables
    tag = a.kind.tag

    if tag == "ilora":
        direction = _ilora_direction(a)
        row = np.ones(a.k) if direction is None else direction
        return W0 + np.outer(t["b"], row), beta0.copy()
    if tag == "lora":
        return W0 + a.kind.scale * (t["B"] @ t["A"]), beta0.copy()
    if tag == "dora":
        V = W0 + a.kind.scale * (t["B"] @ t["A"])
        n = np.maximum(np.linalg.norm(V, axis=1), 1e-300)
        return (t["magnitude"] / n)[:, None] * V, beta0.copy()
    if tag == "vera":
        dW = (t["b"][:, None] * a.frozen["B"]) @ (t["d_vec"][:, None] * a.frozen["A"])
        return W0 + dW, beta0.copy()
    if tag in ("mora1", "mora6"):
        shift = _shift_batch(a, np.eye(a.k))  # row j = shift(e_j)
        return W0 + shift.T, beta0.copy()
    if tag == "bitfit":
        return W0.copy(), beta0 + t["beta"]
    if tag == "difffit":
        return t["gamma"][:, None] * W0, t["gamma"] * (beta0 + t["beta"])
    if tag == "all":
        return W0 + t["delta_W"], beta0 + t["delta_beta"]
    raise AssertionError(tag)


def flop_count(kind: AdapterKind, k: int, d: int) -> tuple[int, int]:
    """(multiplies, additions) of the adapter's extra forward work.

    Counts exclude the base ``W0 @ x`` product (d*k mult, d*(k-1) add) that
    every layer pays anyway; square roots and divisions count as one multiply
    each. Per kind, with r = rank, rh = round(sqrt(d)), c = ceil(k/rh):

    - ilora(sum):    d mult (scale the sum into d outputs); (k-1) + d add
    - ilora(random): k + d mult (projection, then scaling); (k-1) + d add
    - lora:          r*k + d*r mult; r*(k-1) + d*(r-1) + d add
    - dora:          d*r*k + d*k + 3d mult (low-rank product, row norms,
                     sqrt + magnitude/norm ratio, re-scaled matvec minus the
                     excluded base matvec); d*k*(r-1) + d*k + d*(k-1) add
    - vera:          r*k + r + d*r + d mult; r*(k-1) + d*(r-1) + d add
    - mora1:         rh^2 mult; (k - ceil(k/c)) + rh*(rh-1) + d add
    - mora6:         c*(4*(rh//2) + rh^2) mult; c*(2*(rh//2) + rh*(rh-1)) + d add
    - bitfit:        0 mult; d add
    - difffit:       d mult; d add
    - all:           d*k mult; d*(k-1) + 2d add
    """
    r = kind.rank
    tag = kind.tag
    if tag == "ilora":
        mult = d if kind.compression == "sum" else k + d
        return mult, (k - 1) + d
    if tag == "lora":
        return r * k + d * r, r * (k - 1) + d * (r - 1) + d
    if tag == "dora":
        return d * r * k + d * k + 3 * d, d * k * (r - 1) + d * k + d * (k - 1)
    if tag == "vera":
        return r * k + r + d * r + d, r * (k - 1) + d * (r - 1) + d
    if tag in ("mora1", "mora6"):
        rh, chunk, n_groups = _mora_layout(k, d)
        if tag == "mora1":
            return rh * rh, (k - n_groups) + rh * (rh - 1) + d
        pairs = rh // 2
        n_cols = chunk  # length-rh chunks
        return n_cols * (4 * pairs + rh * rh), n_cols * (2 * pairs + rh * (rh - 1)) + d
    if tag == "bitfit":
        return 0, d
    if tag == "difffit":
        return d, d
    if tag == "all":
        return d * k, d * (k - 1) + 2 * d
    raise AssertionError(tag)


def perturb_trainables(a: AdapterState, rng: Rng, scale: float = 0.5) -> None:
    """Add gaussian noise to every trainable (useful for randomized checks)."""
    for name in a.trainables:
        arr = a.trainables[name]
        arr += scale * rng.normal(arr.size).reshape(arr.shape)


# --- batched variants -------------------------------------------------------
#
# Same math as the vector ops, vectorized over a batch X of shape (n, k).
# Training uses these; tests pin them against the per-sample loop.


def _shift_batch(a: AdapterState, X: np.ndarray) -> np.ndarray:
    """Additive shift (n, d) for the purely additive kinds."""
    t = a.trainables
    tag = a.kind.tag
    if tag == "ilora":
        direction = _ilora_direction(a)
        s = X.sum(axis=1) if direction is None else X @ direction
        return np.outer(s, t["b"])
    if tag == "lora":
        return a.kind.scale * ((X @ t["A"].T) @ t["B"].T)
    if tag == "vera":
        return ((X @ a.frozen["A"].T) * t["d_vec"]) @ a.frozen["B"].T * t["b"]
    if tag == "mora1":
        rh, chunk, _ = _mora_layout(a.k, a.d)
        Y = _group_sum(X, a.k, rh, chunk) @ t["M"].T
        return _tile_to(Y, a.d)
    if tag == "mora6":
        rh, n_cols, _ = _mora_layout(a.k, a.d)
        rot = _rope_rotate(_chunked(X, a.k, rh, n_cols))
        flat = (rot @ t["M"].T).reshape(X.shape[0], n_cols * rh)
        return _tile_to(flat, a.d)
    if tag == "bitfit":
        return np.broadcast_to(t["beta"], (X.shape[0], a.d))
    if tag == "all":
        return X @ t["delta_W"].T + t["delta_beta"]
    raise AssertionError(tag)


def forward_batch(a: AdapterState, W0, beta0, X) -> np.ndarray:
    """Adapted outputs (n, d) for a batch of inputs (n, k)."""
    W0 = as_matrix(W0)
    beta0 = as_vector(beta0)
    X = as_matrix(X)
    _check_layer_shapes(a, W0, beta0)
    if X.shape[1] != a.k:
        raise ShapeError(f"X shape {X.shape} incompatible with k={a.k}")
    t = a.trainables
    tag = a.kind.tag
    if tag == "dora":
        V = W0 + a.kind.scale * (t["B"] @ t["A"])
        n = np.maximum(np.linalg.norm(V, axis=1), 1e-300)
        return beta0 + (t["magnitude"] / n) * (X @ V.T)
    if tag == "difffit":
        return t["gamma"] * (X @ W0.T + beta0 + t["beta"])
    return X @ W0.T + beta0 + _shift_batch(a, X)


def backward_batch(a: AdapterState, W0, X, G, beta0=None) -> GradBundle:
    """Batch gradients: parameter grads summed over samples, g_in per sample."""
    W0 = as_matrix(W0)
    X = as_matrix(X)
    G = as_matrix(G)
    t = a.trainables
    tag = a.kind.tag
    grads: dict[str, np.ndarray] = {}

    if tag == "ilora":
        direction = _ilora_direction(a)
        s = X.sum(axis=1) if direction is None else X @ direction
        grads["b"] = G.T @ s
        pull = G @ t["b"]
        row = np.ones(a.k) if direction is None else direction
        return GradBundle(grads, G @ W0 + np.outer(pull, row))
    if tag == "lora":
        scale = a.kind.scale
        Z = X @ t["A"].T
        GZ = scale * (G @ t["B"])
        grads["B"] = scale * (G.T @ Z)
        grads["A"] = GZ.T @ X
        return GradBundle(grads, G @ W0 + GZ @ t["A"])
    if tag == "dora":
        scale = a.kind.scale
        V = W0 + scale * (t["B"] @ t["A"])
        n = np.maximum(np.linalg.norm(V, axis=1), 1e-300)
        U = (X @ V.T) / n
        C = G * t["magnitude"]
        grads["magnitude"] = (G * U).sum(axis=0)
        dV = (C / n).T @ X
        if not a.kind.dora_detach_norm:
            dV -= ((C * U).sum(axis=0) / n**2)[:, None] * V
        grads["B"] = scale * (dV @ t["A"].T)
        grads["A"] = scale * (t["B"].T @ dV)
        return GradBundle(grads, (C / n) @ V)
    if tag == "vera":
        A, B = a.frozen["A"], a.frozen["B"]
        Z = X @ A.T
        Y = (Z * t["d_vec"]) @ B.T
        GW = (G * t["b"]) @ B
        grads["b"] = (G * Y).sum(axis=0)
        grads["d_vec"] = (Z * GW).sum(axis=0)
        return GradBundle(grads, G @ W0 + (GW * t["d_vec"]) @ A)
    if tag == "mora1":
        rh, chunk, _ = _mora_layout(a.k, a.d)
        Z = _group_sum(X, a.k, rh, chunk)
        GY = _untile(G, rh)
        grads["M"] = GY.T @ Z
        GZ = GY @ t["M"]
        return GradBundle(grads, G @ W0 + GZ[:, np.arange(a.k) // chunk])
    if tag == "mora6":
        rh, n_cols, _ = _mora_layout(a.k, a.d)
        rot = _rope_rotate(_chunked(X, a.k, rh, n_cols))
        G_rows = _untile(G, n_cols * rh).reshape(X.shape[0], n_cols, rh)
        grads["M"] = np.einsum("nci,ncs->is", G_rows, rot)
        g_pad = _rope_rotate(G_rows @ t["M"], inverse=True).reshape(X.shape[0], n_cols * rh)
        return GradBundle(grads, G @ W0 + g_pad[:, : a.k])
    if tag == "bitfit":
        grads["beta"] = G.sum(axis=0)
        return GradBundle(grads, G @ W0)
    if tag == "difffit":
        b0 = np.zeros(a.d) if beta0 is None else as_vector(beta0)
        H = X @ W0.T + b0 + t["beta"]
        grads["gamma"] = (G * H).sum(axis=0)
        grads["beta"] = G.sum(axis=0) * t["gamma"]
        return GradBundle(grads, (G * t["gamma"]) @ W0)
    if tag == "all":
        grads["delta_W"] = G.T @ X
        grads["delta_beta"] = G.sum(axis=0)
        return GradBundle(grads, G @ (W0 + t["delta_W"]))
    raise AssertionError(tag)
