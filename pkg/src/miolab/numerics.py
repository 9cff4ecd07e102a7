"""Scalar/vector primitives, stable special functions and reproducible RNG.

Every reduction that feeds a test tolerance goes through :func:`tree_sum`,
which pairs adjacent elements left to right until one value remains. The
order is fixed by the array length alone, so results do not depend on the
BLAS build or on SIMD width.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "DimensionError",
    "DomainError",
    "DegenerateVectorError",
    "tree_sum",
    "dot",
    "norm2",
    "cosine_similarity",
    "softplus",
    "log_sigmoid",
    "sigmoid",
    "l1_norm",
    "Rng",
    "rng_gaussian",
]

NORM_FLOOR = 1e-12


class DimensionError(ValueError):
    """Operand shapes do not agree."""


class DomainError(ValueError):
    """Argument outside the domain of an operation."""


class DegenerateVectorError(DomainError):
    """A vector's norm is too small for a direction to be defined."""


def _as_vec(v, name="v"):
    a = np.asarray(v, dtype=np.float64)
    if a.ndim != 1 or a.size == 0:
        raise DimensionError(f"{name} must be a non-empty 1-D vector, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DomainError(f"{name} has non-finite entries")
    return a


def tree_sum(values, axis=-1):
    """Sum along ``axis`` by repeated pairing of adjacent elements.

    An odd trailing element is carried to the next level unchanged.
    """
    a = np.asarray(values, dtype=np.float64)
    if a.ndim == 0:
        return a[()]
    a = np.moveaxis(a, axis, -1)
    if a.shape[-1] == 0:
        return np.zeros(a.shape[:-1])[()] if a.ndim > 1 else 0.0
    while a.shape[-1] > 1:
        n = a.shape[-1]
        paired = a[..., 0 : n - 1 : 2] + a[..., 1:n:2]
        if n % 2:
            paired = np.concatenate([paired, a[..., -1:]], axis=-1)
        a = paired
    out = a[..., 0]
    return out[()] if out.ndim == 0 else out


def dot(u, v) -> float:
    u = _as_vec(u, "u")
    v = _as_vec(v, "v")
    if u.shape != v.shape:
        raise DimensionError(f"length mismatch: {u.size} vs {v.size}")
    return float(tree_sum(u * v))


def norm2(v) -> float:
    v = _as_vec(v)
    return math.sqrt(tree_sum(v * v))


def cosine_similarity(u, v) -> float:
    """Cosine of the angle between ``u`` and ``v``, clamped to [-1, 1]."""
    nu, nv = norm2(u), norm2(v)
    if nu <= NORM_FLOOR or nv <= NORM_FLOOR:
        raise DegenerateVectorError("cosine similarity undefined for a near-zero vector")
    c = dot(u, v) / (nu * nv)
    return min(1.0, max(-1.0, c))


def softplus(x):
    """``log(1 + exp(x))`` without overflow; accepts scalars or arrays."""
    x = np.asarray(x, dtype=np.float64)
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return out[()] if out.ndim == 0 else out


def log_sigmoid(x):
    """``log(1 / (1 + exp(-x)))`` evaluated as ``-softplus(-x)``.

    Works on scalars and arrays. Non-finite input raises :class:`DomainError`.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise DomainError("log_sigmoid needs finite input")
    out = -softplus(-x)
    return float(out) if np.ndim(out) == 0 else out


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return out[()] if out.ndim == 0 else out


def l1_norm(v) -> float:
    return float(tree_sum(np.abs(_as_vec(v))))


class Rng:
    """Counter-based generator keyed by ``(seed, stream)``.

    Backed by numpy's Philox4x64 bit generator, whose output is a pure
    function of its 128-bit key and counter and therefore identical on
    every platform. Child streams are derived with :meth:`substream`;
    the key of a child depends only on the parent key and the ids passed,
    never on how many draws the parent has made.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream = int(stream) & 0xFFFFFFFFFFFFFFFF
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def substream(self, *ids: int) -> "Rng":
        """Independent child stream named by a tuple of non-negative ints."""
        ss = np.random.SeedSequence(entropy=[self.seed, self.stream], spawn_key=tuple(int(i) for i in ids))
        s0, s1 = ss.generate_state(2, dtype=np.uint64)
        return Rng(int(s0), int(s1))

    def normal(self, mean=0.0, sigma=1.0, size=None):
        return self._gen.normal(mean, sigma, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def random(self, size=None):
        return self._gen.random(size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def __repr__(self):
        return f"Rng(seed={self.seed}, stream={self.stream})"


def rng_gaussian(rng: Rng, mean: float, sigma: float) -> float:
    """One normal draw; ``sigma == 0`` returns ``mean`` without consuming state."""
    if not sigma >= 0:
        raise DomainError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return float(mean)
    return float(rng.normal(mean, sigma))
