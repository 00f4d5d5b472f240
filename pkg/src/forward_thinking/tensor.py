"""Dense float64 arrays, the few kernels the trainers need, and seeded randomness.

Arrays are plain ``numpy.ndarray`` objects in row-major, batch-major layout
(axis 0 is the sample index).  ``SeededRng`` wraps numpy's PCG64 bit generator;
PCG64 output and the ``Generator`` sampling methods used here are stable across
platforms for a given numpy release.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, DomainError

DTYPE = np.float64

Tensor = np.ndarray


class SeededRng:
    """Deterministic random stream (PCG64) keyed by a 64-bit seed."""

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def spawn(self, key: int) -> "SeededRng":
        """Independent child stream derived from ``(seed, key)``."""
        ss = np.random.SeedSequence([self.seed, int(key)])
        return SeededRng(int(ss.generate_state(1, dtype=np.uint64)[0]))

    def uniform(self, low: float, high: float, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc: float, scale: float, size=None):
        return self._gen.normal(loc, scale, size)

    def random(self, size=None):
        return self._gen.random(size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def as_tensor(x) -> Tensor:
    return np.ascontiguousarray(x, dtype=DTYPE)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b


def elementwise_map(x: Tensor, f: Callable[[float], float]) -> Tensor:
    """Apply ``f`` to every element; numpy ufuncs run vectorised."""
    if isinstance(f, np.ufunc):
        return f(x).astype(DTYPE, copy=False)
    return np.vectorize(f, otypes=[DTYPE])(x) if x.size else x.astype(DTYPE, copy=True)


def relu(x: Tensor) -> Tensor:
    return np.maximum(x, 0.0)


def argmax_rows(x: Tensor) -> np.ndarray:
    """Column index of each row's maximum. Ties go to the lowest index."""
    if x.ndim != 2 or x.shape[0] == 0 or x.shape[1] == 0:
        raise DomainError(f"argmax_rows needs a non-empty 2-d array, got shape {x.shape}")
    # np.argmax returns the first occurrence of the maximum
    return np.argmax(x, axis=1)


def uniform_init(rng: SeededRng, shape: Sequence[int], bound: float) -> Tensor:
    if not bound > 0:
        raise DomainError(f"uniform_init bound must be positive, got {bound}")
    return rng.uniform(-bound, bound, size=tuple(shape)).astype(DTYPE, copy=False)


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))
