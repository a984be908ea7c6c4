"""Dense float64 linear algebra on plain numpy arrays, plus a reproducible PRNG.

A matrix is a 2-d ``np.ndarray`` (row-major, 64-bit floats), a vector a 1-d
one. Public operations validate shapes and reject non-finite values, so
downstream code can assume clean data.

Randomness comes from a counter-based generator: output ``i`` of a stream is
``mix64(key + i * gamma)`` where ``mix64`` is the splitmix64 finalizer and the
key is derived from ``(seed, stream)``. Draws therefore depend only on seed,
stream id and position, are bit-identical on every platform, and consuming
more values on one stream can never shift another stream's sequence. The
``STREAM_*`` constants give each consumer in the library its own stream.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError, ShapeError

# Stream ids. One stream per consumer: adding a method or candidate never
# perturbs anyone else's draws.
STREAM_BASE = 0         # pretrained/base weights
STREAM_ADAPTER = 1      # adapter trainable init (e.g. the random LoRA factor)
STREAM_DATA = 2         # task inputs, teachers, noise, labels
STREAM_VERA = 3         # VeRA's frozen projection matrices
STREAM_COMPRESSION = 4  # frozen random compression direction
STREAM_ALIGNMENT = 5    # random candidate vector in alignment reports

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4B5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U64 = 1 << 64


def _mix64(z: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer, elementwise on uint64 arrays (wrapping)."""
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


class Rng:
    """Deterministic counter-based random stream.

    ``Rng(seed, stream)`` always yields the same sequence for the same pair,
    independent of platform and of any other stream. The instance is single
    owner: it keeps only a running counter.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        halves = np.array([self.seed % _U64, self.stream % _U64], dtype=np.uint64)
        h = _mix64(halves + _GAMMA)
        self._key = _mix64(h[0:1] ^ (h[1:2] * _MIX1))[0]
        self._count = 0

    def spawn(self, stream: int) -> "Rng":
        """Fresh stream with the same seed (counter starts at zero)."""
        return Rng(self.seed, stream)

    def raw(self, n: int) -> np.ndarray:
        """Next ``n`` raw 64-bit words."""
        if n < 0:
            raise ValueError(f"n must be >= 0, got {n}")
        idx = np.arange(self._count, self._count + n, dtype=np.uint64)
        self._count += int(n)
        return _mix64(self._key + idx * _GAMMA)

    def uniform(self, lo: float = 0.0, hi: float = 1.0, n: int = 1) -> np.ndarray:
        """``n`` doubles in [lo, hi), from the top 53 bits of each raw word."""
        if not lo < hi:
            raise ValueError(f"need lo < hi, got [{lo}, {hi})")
        u = (self.raw(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return lo + (hi - lo) * u

    def normal(self, n: int) -> np.ndarray:
        """``n`` standard normals via Box-Muller (consumes 2*ceil(n/2) words)."""
        if n == 0:
            return np.zeros(0)
        m = (n + 1) // 2
        u1 = self.uniform(0.0, 1.0, m)
        u2 = self.uniform(0.0, 1.0, m)
        r = np.sqrt(-2.0 * np.log1p(-u1))  # 1-u1 is in (0,1], log is safe
        ang = 2.0 * np.pi * u2
        return np.concatenate([r * np.cos(ang), r * np.sin(ang)])[:n]

    def normal_matrix(self, rows: int, cols: int) -> np.ndarray:
        return self.normal(rows * cols).reshape(rows, cols)

    def unit_vector(self, n: int) -> np.ndarray:
        """Uniform random direction on the unit sphere in R^n."""
        v = self.normal(n)
        return v / np.linalg.norm(v)


def seeded_uniform(rng: Rng, lo: float, hi: float, n: int) -> np.ndarray:
    """Uniform draws from an owned stream; deterministic for fixed (seed, stream)."""
    return rng.uniform(lo, hi, n)


def as_matrix(a) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"expected a non-empty 2-d array, got shape {arr.shape}")
    return arr


def as_vector(a) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeError(f"expected a 1-d array, got shape {arr.shape}")
    return arr


def check_finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{what} contains non-finite entries")
    return arr


def matvec(m, v) -> np.ndarray:
    """Matrix-vector product with shape validation."""
    M = as_matrix(m)
    x = as_vector(v)
    if M.shape[1] != x.shape[0]:
        raise ShapeError(f"matvec: {M.shape} @ ({x.shape[0]},) mismatch")
    return check_finite(M @ x, "matvec result")


def _jacobi_tangent(alpha: float, beta: float, gamma: float) -> float:
    # Solves t^2 + 2*zeta*t - 1 = 0 for the smaller-magnitude root; zeta = 0
    # (equal column norms) takes the 45-degree rotation.
    zeta = (beta - alpha) / (2.0 * gamma)
    if zeta >= 0.0:
        return 1.0 / (zeta + np.sqrt(1.0 + zeta * zeta))
    return -1.0 / (-zeta + np.sqrt(1.0 + zeta * zeta))


def _fill_orthonormal(U: np.ndarray, missing: np.ndarray) -> None:
    # Complete columns for (near-)zero singular values: pick the coordinate
    # axis least explained by the existing columns, orthogonalize twice.
    rows = U.shape[0]
    accept = 0.5 / np.sqrt(rows)
    for j in missing:
        for i in range(rows):
            cand = np.zeros(rows)
            cand[i] = 1.0
            for _ in range(2):
                cand -= U @ (U.T @ cand)
            nrm = np.linalg.norm(cand)
            if nrm > accept:
                U[:, j] = cand / nrm
                break


def svd(m) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One-sided Jacobi SVD of a small dense matrix.

    Returns ``(U, S, V)`` with ``m = U @ diag(S) @ V.T``, singular values
    sorted descending and non-negative, and orthonormal columns in U and V.
    Sweeps rotate column pairs until the off-diagonal mass of the column Gram
    matrix falls below 1e-12 of its trace (or 100 sweeps). Each right
    singular vector has its largest-magnitude entry forced non-negative so
    downstream cosine reports are deterministic up to that convention.
    """
    M = as_matrix(m)
    check_finite(M, "svd input")
    transposed = M.shape[0] < M.shape[1]
    A = (M.T if transposed else M).copy()
    rows, cols = A.shape
    V = np.eye(cols)
    total = float(np.sum(A * A))

    for _ in range(100):
        off = 0.0
        for p in range(cols - 1):
            for q in range(p + 1, cols):
                ap = A[:, p]
                aq = A[:, q]
                gamma = float(ap @ aq)
                off += gamma * gamma
                alpha = float(ap @ ap)
                beta = float(aq @ aq)
                if abs(gamma) <= 1e-18 * np.sqrt(alpha * beta) or gamma == 0.0:
                    continue
                t = _jacobi_tangent(alpha, beta, gamma)
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                A[:, p], A[:, q] = c * ap - s * aq, s * ap + c * aq
                vp = V[:, p].copy()
                vq = V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
        if np.sqrt(off) <= 1e-12 * max(total, 1e-300):
            break

    norms = np.linalg.norm(A, axis=0)
    order = np.argsort(-norms, kind="stable")
    S = norms[order]
    V = V[:, order]
    U = np.zeros((rows, cols))
    thresh = np.finfo(float).eps * max(rows, cols) * (S[0] if S.size else 0.0)
    good = S > thresh
    if np.any(good):
        U[:, good] = A[:, order[good]] / S[good]
    S = np.where(good, S, 0.0)
    _fill_orthonormal(U, np.where(~good)[0])

    if transposed:
        U, V = V, U
    # Deterministic column signs: largest-|entry| of each right vector >= 0.
    for j in range(V.shape[1]):
        i = int(np.argmax(np.abs(V[:, j])))
        if V[i, j] < 0.0:
            V[:, j] = -V[:, j]
            U[:, j] = -U[:, j]
    return U, S, V
