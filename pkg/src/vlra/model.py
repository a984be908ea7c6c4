"""Frozen base networks the adapters attach to.

An :class:`AdaptedLinear` wraps one frozen layer with an optional adapter and
the two unfreezable extras of the combination study: a trainable bias shift
(bias fine-tuning on top of any adapter) and a trainable output scale. A
:class:`ToyNet` chains one or two such layers with an activation and an
optional LayerNorm between them:

    x -> layer1 -> activation -> [LayerNorm] -> layer2 -> y

Forward passes record a tape of intermediates; :func:`net_backward` replays
it for exact gradients of every trainable. Tapes are invalidated by
``net.mark_updated()`` after a parameter step.

GELU uses the exact erf form (not the tanh approximation) so that central
finite differences agree with the analytic gradients to tight tolerances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from . import adapters
from .adapters import AdapterKind, AdapterState, make_adapter
from .errors import ShapeError, StaleTapeError
from .linalg import Rng, as_matrix, as_vector

UNFREEZE_FLAGS = frozenset({"biases", "gamma", "norms"})
ACTIVATIONS = ("gelu", "relu", "none")

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "gelu":
        return 0.5 * z * (1.0 + erf(z * _INV_SQRT2))
    if name == "relu":
        return np.maximum(z, 0.0)
    return z


def _act_grad(name: str, z: np.ndarray) -> np.ndarray:
    if name == "gelu":
        return 0.5 * (1.0 + erf(z * _INV_SQRT2)) + z * _INV_SQRT2PI * np.exp(-0.5 * z * z)
    if name == "relu":
        return (z > 0.0).astype(float)
    return np.ones_like(z)


@dataclass
class FrozenLinear:
    """A pretrained layer; never mutated after construction."""

    W0: np.ndarray  # (d, k)
    beta0: np.ndarray  # (d,)

    def __post_init__(self):
        self.W0 = as_matrix(self.W0)
        self.beta0 = as_vector(self.beta0)
        if self.beta0.shape[0] != self.W0.shape[0]:
            raise ShapeError(f"beta0 len {self.beta0.shape[0]} != rows {self.W0.shape[0]}")

    @property
    def k(self) -> int:
        return self.W0.shape[1]

    @property
    def d(self) -> int:
        return self.W0.shape[0]


class LayerNorm:
    """LayerNorm with trainable-when-unfrozen scale (init 1) and shift (init 0)."""

    EPS = 1e-5

    def __init__(self, width: int):
        self.scale = np.ones(width)
        self.shift = np.zeros(width)

    def forward(self, v: np.ndarray):
        mu = v.mean()
        var = ((v - mu) ** 2).mean()
        inv = 1.0 / np.sqrt(var + self.EPS)
        vhat = (v - mu) * inv
        return self.scale * vhat + self.shift, (vhat, inv)

    def backward(self, cache, g: np.ndarray):
        vhat, inv = cache
        grads = {"scale": g * vhat, "shift": g.copy()}
        gh = g * self.scale
        gv = inv * (gh - gh.mean() - vhat * (gh * vhat).mean())
        return grads, gv


class AdaptedLinear:
    """Frozen linear layer plus adapter and per-layer unfreeze extras.

    Output is ``out_scale * (adapter_forward(x) + bias_shift)`` where either
    extra may be absent. bias_shift (zeros at init) realizes bias
    fine-tuning on top of any adapter; out_scale (ones at init) realizes the
    scaling-factor component. Both preserve the zero-shift initialization.
    """

    def __init__(self, base: FrozenLinear, adapter: AdapterState | None = None,
                 train_bias: bool = False, train_scale: bool = False):
        self.base = base
        self.adapter = adapter
        self.bias_shift = np.zeros(base.d) if train_bias else None
        self.out_scale = np.ones(base.d) if train_scale else None

    @property
    def k(self) -> int:
        return self.base.k

    @property
    def d(self) -> int:
        return self.base.d

    def trainables(self, prefix: str = "") -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        if self.adapter is not None:
            for name, arr in self.adapter.trainables.items():
                out[prefix + name] = arr
        if self.bias_shift is not None:
            out[prefix + "bias_shift"] = self.bias_shift
        if self.out_scale is not None:
            out[prefix + "out_scale"] = self.out_scale
        return out

    def trainable_count(self) -> int:
        return sum(v.size for v in self.trainables().values())

    def _pre_scale(self, x: np.ndarray) -> np.ndarray:
        if self.adapter is not None:
            h = adapters.forward(self.adapter, self.base.W0, self.base.beta0, x)
        else:
            h = self.base.W0 @ x + self.base.beta0
        if self.bias_shift is not None:
            h = h + self.bias_shift
        return h

    def forward(self, x: np.ndarray):
        """Returns (y, cache); the cache feeds :meth:`backward`."""
        x = as_vector(x)
        pre = self._pre_scale(x)
        y = pre if self.out_scale is None else self.out_scale * pre
        return y, (x, pre)

    def backward(self, cache, g: np.ndarray):
        x, pre = cache
        grads: dict[str, np.ndarray] = {}
        if self.out_scale is not None:
            grads["out_scale"] = g * pre
            g = g * self.out_scale
        if self.bias_shift is not None:
            grads["bias_shift"] = g.copy()
        if self.adapter is not None:
            bundle = adapters.backward(self.adapter, self.base.W0, x, g, self.base.beta0)
            grads.update(bundle.grads)
            g_in = bundle.g_in
        else:
            g_in = self.base.W0.T @ g
        return grads, g_in

    def _pre_scale_batch(self, X: np.ndarray) -> np.ndarray:
        if self.adapter is not None:
            H = adapters.forward_batch(self.adapter, self.base.W0, self.base.beta0, X)
        else:
            H = X @ self.base.W0.T + self.base.beta0
        if self.bias_shift is not None:
            H = H + self.bias_shift
        return H

    def forward_batch(self, X: np.ndarray) -> np.ndarray:
        H = self._pre_scale_batch(X)
        return H if self.out_scale is None else self.out_scale * H

    def backward_batch(self, X: np.ndarray, G: np.ndarray):
        grads: dict[str, np.ndarray] = {}
        if self.out_scale is not None:
            grads["out_scale"] = (G * self._pre_scale_batch(X)).sum(axis=0)
            G = G * self.out_scale
        if self.bias_shift is not None:
            grads["bias_shift"] = G.sum(axis=0)
        if self.adapter is not None:
            bundle = adapters.backward_batch(self.adapter, self.base.W0, X, G, self.base.beta0)
            grads.update(bundle.grads)
            g_in = bundle.g_in
        else:
            g_in = G @ self.base.W0
        return grads, g_in

    # fd_gradcheck hooks
    def eval_vector(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def grads_vector(self, x: np.ndarray, g_out: np.ndarray) -> dict[str, np.ndarray]:
        _, cache = self.forward(x)
        grads, _ = self.backward(cache, g_out)
        return grads


@dataclass
class Tape:
    version: int
    records: list = field(default_factory=list)


@dataclass
class ToyNet:
    """One or two adapted linear layers with activation and optional norm."""

    layers: list[AdaptedLinear]
    activation: str = "none"
    norm: LayerNorm | None = None
    norms_trainable: bool = False
    version: int = 0

    def mark_updated(self) -> None:
        """Invalidate outstanding tapes after a parameter update."""
        self.version += 1

    def trainables(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for i, layer in enumerate(self.layers):
            out.update(layer.trainables(prefix=f"layer{i}."))
        if self.norm is not None and self.norms_trainable:
            out["norm.scale"] = self.norm.scale
            out["norm.shift"] = self.norm.shift
        return out

    def trainable_count(self) -> int:
        return sum(v.size for v in self.trainables().values())

    # fd_gradcheck hooks
    def eval_vector(self, x: np.ndarray) -> np.ndarray:
        return net_forward(self, x)[0]

    def grads_vector(self, x: np.ndarray, g_out: np.ndarray) -> dict[str, np.ndarray]:
        _, tape = net_forward(self, x)
        return net_backward(self, tape, g_out)


def make_frozen_linear(k: int, d: int, rng: Rng, bias_scale: float = 0.5) -> FrozenLinear:
    """Random pretrained layer: W0 ~ N(0, 1/k) entries, small random bias."""
    W0 = rng.normal_matrix(d, k) / np.sqrt(k)
    beta0 = bias_scale * rng.normal(d)
    return FrozenLinear(W0, beta0)


def make_single(k: int, d: int, rng: Rng) -> ToyNet:
    return ToyNet(layers=[AdaptedLinear(make_frozen_linear(k, d, rng))])


def make_mlp(k: int, hidden: int, out: int, rng: Rng, activation: str = "gelu",
             norm: bool = False) -> ToyNet:
    if activation not in ACTIVATIONS:
        raise ValueError(f"activation must be one of {ACTIVATIONS}")
    layers = [
        AdaptedLinear(make_frozen_linear(k, hidden, rng)),
        AdaptedLinear(make_frozen_linear(hidden, out, rng)),
    ]
    return ToyNet(layers=layers, activation=activation,
                  norm=LayerNorm(hidden) if norm else None)


def attach(net: ToyNet, kind: AdapterKind | None, unfreeze, rng: Rng) -> ToyNet:
    """Install adapters on every layer and mark components trainable.

    ``unfreeze`` is any iterable over {"biases", "gamma", "norms"}; adapter
    kind None trains only the unfrozen components. The classification head
    convention is the caller's: heads should simply not be part of the net.
    """
    flags = frozenset(unfreeze)
    unknown = flags - UNFREEZE_FLAGS
    if unknown:
        raise ValueError(f"unknown unfreeze flags {sorted(unknown)}; valid: {sorted(UNFREEZE_FLAGS)}")
    for layer in net.layers:
        if kind is not None:
            layer.adapter = make_adapter(kind, layer.k, layer.d, rng, W0=layer.base.W0)
        layer.bias_shift = np.zeros(layer.d) if "biases" in flags else None
        layer.out_scale = np.ones(layer.d) if "gamma" in flags else None
    net.norms_trainable = "norms" in flags and net.norm is not None
    net.mark_updated()
    return net


def net_forward(net: ToyNet, x) -> tuple[np.ndarray, Tape]:
    """Composite forward pass; the tape stores intermediates for backward."""
    x = as_vector(x)
    if x.shape[0] != net.layers[0].k:
        raise ShapeError(f"input len {x.shape[0]} != {net.layers[0].k}")
    tape = Tape(version=net.version)
    h = x
    last = len(net.layers) - 1
    for i, layer in enumerate(net.layers):
        h, cache = layer.forward(h)
        tape.records.append(("layer", i, cache))
        if i < last:
            z = h
            h = _act(net.activation, z)
            tape.records.append(("act", i, z))
            if net.norm is not None:
                h, ncache = net.norm.forward(h)
                tape.records.append(("norm", i, ncache))
    return h, tape


def net_backward(net: ToyNet, tape: Tape, g_y) -> dict[str, np.ndarray]:
    """Gradients of every trainable for upstream gradient g_y."""
    if tape.version != net.version:
        raise StaleTapeError("tape predates the last parameter update")
    g = as_vector(g_y)
    grads: dict[str, np.ndarray] = {}
    for record in reversed(tape.records):
        tag, i, payload = record
        if tag == "layer":
            layer_grads, g = net.layers[i].backward(payload, g)
            for name, val in layer_grads.items():
                grads[f"layer{i}.{name}"] = val
        elif tag == "act":
            g = g * _act_grad(net.activation, payload)
        elif tag == "norm":
            norm_grads, g = net.norm.backward(payload, g)
            if net.norms_trainable:
                grads["norm.scale"] = norm_grads["scale"]
                grads["norm.shift"] = norm_grads["shift"]
    return {name: grads[name] for name in net.trainables()}
