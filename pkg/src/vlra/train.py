"""Deterministic synthetic tasks, from-scratch optimizers, and the run loop.

Tasks are teacher-student: a pretrained layer (W0, beta0=0) is shifted by a
structured update dW* and targets are generated as ``Y = (W0 + dW*) X +
noise``. The student gets the *same* frozen base plus an adapter, so each
method's hypothesis class determines how much of the shift it can recover:

- ``teacher_rank1_sum``     dW* = outer(b*, ones): exactly representable by
                            the summation adapter.
- ``teacher_rank1_random``  dW* = outer(b*, a*) for a random unit direction.
- ``teacher_fullrank``      dense gaussian dW* (entries N(0, 1/k)).
- ``blobs_classification``  gaussian class blobs with one-hot targets (MSE).

All randomness is drawn from dedicated counter-based streams of the task or
run seed, so identical configs produce bit-identical loss curves. Wall time
is measured around the step loop only.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .adapters import AdapterKind, flop_count, make_adapter
from .errors import ShapeError
from .linalg import STREAM_ADAPTER, STREAM_BASE, STREAM_DATA, Rng
from .model import FrozenLinear, AdaptedLinear, UNFREEZE_FLAGS

TASK_KINDS = ("teacher_rank1_sum", "teacher_rank1_random", "teacher_fullrank",
              "blobs_classification")
INPUT_DISTS = ("gaussian", "relu_gaussian")


@dataclass(frozen=True)
class TaskSpec:
    kind: str
    k: int
    d: int
    n_train: int = 256
    n_val: int = 64
    input_dist: str = "gaussian"
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.input_dist not in INPUT_DISTS:
            raise ValueError(f"unknown input_dist {self.input_dist!r}")
        if self.n_train < 1 or self.n_val < 1:
            raise ValueError("n_train and n_val must be >= 1")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")


@dataclass(frozen=True)
class TrainConfig:
    task: TaskSpec
    method: AdapterKind | None
    unfreeze: frozenset = frozenset()
    optimizer: str = "adamw"
    lr: float = 1e-2          # desk-scale default, deliberately not a paper value
    lr_schedule: str = "cosine"  # "constant" | "cosine"; cosine settles the quadratics
    weight_decay: float = 0.0
    batch: int = 0            # 0 = full batch
    steps: int = 2000
    eval_every: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.optimizer not in ("sgd", "adamw"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")
        unknown = frozenset(self.unfreeze) - UNFREEZE_FLAGS
        if unknown:
            raise ValueError(f"unknown unfreeze flags {sorted(unknown)}")


@dataclass
class RunResult:
    method: str
    task: str
    seed: int
    params: int
    flops_mult: int
    flops_add: int
    final_train_loss: float
    final_val_loss: float
    best_val_loss: float
    wall_ms: float
    status: str  # "ok" | "diverged"
    history: list = field(default_factory=list, repr=False)  # (step, train, val)


@dataclass
class TaskData:
    X: np.ndarray
    Y: np.ndarray
    X_val: np.ndarray
    Y_val: np.ndarray
    W0: np.ndarray
    beta0: np.ndarray
    W_star: np.ndarray
    beta_star: np.ndarray
    dW_star: np.ndarray


def method_name(kind: AdapterKind | None) -> str:
    if kind is None:
        return "none"
    if kind.tag == "ilora" and kind.compression == "random":
        return "ilora_rand"
    return kind.tag


def _draw_inputs(rng: Rng, n: int, k: int, dist: str) -> np.ndarray:
    X = rng.normal_matrix(n, k)
    if dist == "relu_gaussian":
        X = np.maximum(X, 0.0)
    return X


def gen_task(spec: TaskSpec) -> TaskData:
    """Materialize a task: datasets plus the teacher that generated them."""
    base_rng = Rng(spec.seed, STREAM_BASE)
    data_rng = Rng(spec.seed, STREAM_DATA)
    k, d = spec.k, spec.d
    W0 = base_rng.normal_matrix(d, k) / math.sqrt(k)
    beta0 = np.zeros(d)

    if spec.kind == "blobs_classification":
        centers = 2.0 * data_rng.normal_matrix(d, k)
        labels = np.arange(spec.n_train) % d
        labels_val = np.arange(spec.n_val) % d
        X = centers[labels] + data_rng.normal_matrix(spec.n_train, k)
        X_val = centers[labels_val] + data_rng.normal_matrix(spec.n_val, k)
        Y = np.eye(d)[labels]
        Y_val = np.eye(d)[labels_val]
        if spec.noise_std > 0:
            Y = Y + spec.noise_std * data_rng.normal_matrix(spec.n_train, d)
            Y_val = Y_val + spec.noise_std * data_rng.normal_matrix(spec.n_val, d)
        zero = np.zeros((d, k))
        return TaskData(X, Y, X_val, Y_val, W0, beta0, W0.copy(), beta0.copy(), zero)

    if spec.kind == "teacher_rank1_sum":
        b_star = data_rng.normal(d)
        dW = np.outer(b_star, np.ones(k))
    elif spec.kind == "teacher_rank1_random":
        b_star = data_rng.normal(d)
        dW = np.outer(b_star, data_rng.unit_vector(k))
    else:  # teacher_fullrank
        dW = data_rng.normal_matrix(d, k) / math.sqrt(k)

    W_star = W0 + dW
    beta_star = np.zeros(d)
    X = _draw_inputs(data_rng, spec.n_train, k, spec.input_dist)
    X_val = _draw_inputs(data_rng, spec.n_val, k, spec.input_dist)
    Y = X @ W_star.T + beta_star
    Y_val = X_val @ W_star.T + beta_star
    if spec.noise_std > 0:
        Y = Y + spec.noise_std * data_rng.normal_matrix(spec.n_train, d)
        Y_val = Y_val + spec.noise_std * data_rng.normal_matrix(spec.n_val, d)
    return TaskData(X, Y, X_val, Y_val, W0, beta0, W_star, beta_star, dW)


def _check_like(params: dict, grads: dict) -> None:
    for name, p in params.items():
        g = grads.get(name)
        if g is None or g.shape != p.shape:
            raise ShapeError(f"gradient for {name!r} missing or shaped {None if g is None else g.shape}")


def sgd_step(params: dict, grads: dict, lr: float, weight_decay: float = 0.0) -> None:
    """Plain SGD with decoupled decay: p <- (1 - lr*wd) p - lr g."""
    _check_like(params, grads)
    for name, p in params.items():
        if weight_decay:
            p *= 1.0 - lr * weight_decay
        p -= lr * grads[name]


def adamw_init(params: dict) -> dict:
    return {
        "m": {name: np.zeros_like(p) for name, p in params.items()},
        "v": {name: np.zeros_like(p) for name, p in params.items()},
        "t": 0,
    }


def adamw_step(params: dict, grads: dict, state: dict, lr: float,
               weight_decay: float = 0.0, beta1: float = 0.9, beta2: float = 0.999,
               eps: float = 1e-8) -> tuple[dict, dict]:
    """Decoupled-weight-decay Adam update, in place.

    Decay multiplies parameters by (1 - lr*wd) before the moment-based step,
    so zero gradient with wd > 0 is a pure shrink, and the first step with
    gradient g moves by about -lr * g / (|g| + eps).
    """
    _check_like(params, grads)
    state["t"] += 1
    t = state["t"]
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, p in params.items():
        g = grads[name]
        m = state["m"][name]
        v = state["v"][name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        if weight_decay:
            p *= 1.0 - lr * weight_decay
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return params, state


def _mse(layer: AdaptedLinear, X: np.ndarray, Y: np.ndarray) -> float:
    R = layer.forward_batch(X) - Y
    return float((R * R).mean())


def build_student(cfg: TrainConfig, data: TaskData) -> AdaptedLinear:
    """The benchmark unit: one adapted linear layer on the task's frozen base."""
    layer = AdaptedLinear(
        FrozenLinear(data.W0, data.beta0),
        train_bias="biases" in cfg.unfreeze,
        train_scale="gamma" in cfg.unfreeze,
    )
    if cfg.method is not None:
        layer.adapter = make_adapter(cfg.method, cfg.task.k, cfg.task.d,
                                     Rng(cfg.seed, STREAM_ADAPTER), W0=data.W0)
    return layer


def fit(cfg: TrainConfig) -> tuple[AdaptedLinear, RunResult]:
    """Train and return both the adapted layer and its result row."""
    data = gen_task(cfg.task)
    layer = build_student(cfg, data)
    params = layer.trainables()
    opt_state = adamw_init(params) if cfg.optimizer == "adamw" else None

    X, Y = data.X, data.Y
    n = X.shape[0]
    batch = cfg.batch if 0 < cfg.batch < n else n
    status = "ok"
    history: list[tuple[int, float, float]] = []

    t0 = time.monotonic()
    with np.errstate(over="ignore", invalid="ignore"):  # divergence is reported, not raised
        for step in range(cfg.steps):
            if batch == n:
                Xb, Yb = X, Y
            else:
                idx = (step * batch + np.arange(batch)) % n
                Xb, Yb = X[idx], Y[idx]
            R = layer.forward_batch(Xb) - Yb
            loss = float((R * R).mean())
            if not math.isfinite(loss):
                status = "diverged"
                break
            G = (2.0 / R.size) * R
            grads, _ = layer.backward_batch(Xb, G)
            lr = cfg.lr
            if cfg.lr_schedule == "cosine":
                lr = cfg.lr * 0.5 * (1.0 + math.cos(math.pi * step / cfg.steps))
            if cfg.optimizer == "adamw":
                adamw_step(params, grads, opt_state, lr, cfg.weight_decay)
            else:
                sgd_step(params, grads, lr, cfg.weight_decay)
            if (step + 1) % cfg.eval_every == 0 or step + 1 == cfg.steps:
                history.append((step + 1, _mse(layer, X, Y), _mse(layer, data.X_val, data.Y_val)))
    wall_ms = (time.monotonic() - t0) * 1e3

    if status == "ok":
        final_train = _mse(layer, X, Y)
        final_val = _mse(layer, data.X_val, data.Y_val)
        best_val = min(v for _, _, v in history) if history else final_val
    else:
        final_train = final_val = best_val = math.inf

    kind = cfg.method
    mult, add = flop_count(kind, cfg.task.k, cfg.task.d) if kind is not None else (0, 0)
    result = RunResult(
        method=method_name(kind),
        task=cfg.task.kind,
        seed=cfg.seed,
        params=layer.trainable_count(),
        flops_mult=mult,
        flops_add=add,
        final_train_loss=final_train,
        final_val_loss=final_val,
        best_val_loss=best_val,
        wall_ms=wall_ms,
        status=status,
        history=history,
    )
    return layer, result


def train_run(cfg: TrainConfig) -> RunResult:
    return fit(cfg)[1]


def time_adapter_steps(kinds, k: int, d: int, steps: int = 1000, trials: int = 5,
                       seed: int = 0, lr: float = 1e-4) -> dict[str, list[float]]:
    """Wall-time probe: ms per training step (forward, backward, SGD update).

    Single-sample steps on a single adapted layer; inputs are pre-generated
    and shared so only adapter work differs. Within every trial the methods
    alternate in 100-step blocks, so machine-load drift hits all of them
    equally; each method still accumulates exactly ``steps`` steps per trial.
    Returns per-trial ms/step lists, one entry per trial.
    """
    base_rng = Rng(seed, STREAM_BASE)
    W0 = base_rng.normal_matrix(d, k) / math.sqrt(k)
    beta0 = np.zeros(d)
    xs = Rng(seed, STREAM_DATA).normal_matrix(steps, k)
    out: dict[str, list[float]] = {method_name(kd): [] for kd in kinds}
    block = min(100, steps)

    def fresh(kd):
        layer = AdaptedLinear(FrozenLinear(W0, beta0))
        layer.adapter = make_adapter(kd, k, d, Rng(seed, STREAM_ADAPTER), W0=W0)
        return layer, layer.trainables()

    def run_block(layer, params, start: int, n_steps: int) -> float:
        t0 = time.perf_counter()
        for i in range(start, start + n_steps):
            x = xs[i]
            y, cache = layer.forward(x)
            grads, _ = layer.backward(cache, (2.0 / d) * y)
            sgd_step(params, grads, lr)
        return time.perf_counter() - t0

    for kd in kinds:  # warm caches before anything is timed
        run_block(*fresh(kd), 0, block)
    for _ in range(trials):
        states = {method_name(kd): fresh(kd) for kd in kinds}
        elapsed = {name: 0.0 for name in states}
        done = 0
        while done < steps:
            n = min(block, steps - done)
            for kd in kinds:
                name = method_name(kd)
                elapsed[name] += run_block(*states[name], done, n)
            done += n
        for name, secs in elapsed.items():
            out[name].append(secs * 1e3 / steps)
    return out
