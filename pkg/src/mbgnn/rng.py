"""Counter-based SplitMix64 random stream.

Output ``n`` (0-based) of a stream with seed ``s`` is
``mix64(s + (n + 1) * 0x9E3779B97F4A7C15 mod 2**64)`` where ``mix64`` is the
SplitMix64 finalizer. This is the same sequence as the classic sequential
SplitMix64 generator, but it can be evaluated in blocks with numpy.

Derived distributions:

* uniform: ``(x >> 11) * 2**-53`` in ``[0, 1)``
* normal: Box-Muller on consecutive uniform pairs ``(u1, u2)``,
  ``r = sqrt(-2 ln(1 - u1))``, emitting ``r cos(2 pi u2)`` then ``r sin(2 pi u2)``
* permutation: stable argsort of ``n`` uniforms
* sub-streams: ``stream(name)`` reseeds with ``mix64(seed ^ fnv1a64(name))``
"""
from __future__ import annotations

import numpy as np

from .errors import ParameterError

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def mix64(z: np.ndarray) -> np.ndarray:
    z = z.astype(np.uint64, copy=True)
    with np.errstate(over="ignore"):
        z ^= z >> np.uint64(30)
        z *= _M1
        z ^= z >> np.uint64(27)
        z *= _M2
        z ^= z >> np.uint64(31)
    return z


def fnv1a64(text: str) -> int:
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * 0x100000001B3) & _MASK
    return h


class SeededRng:
    """Single-owner random stream; every draw advances an internal counter."""

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK
        self.counter = 0

    def __repr__(self) -> str:
        return f"SeededRng(seed={self.seed}, counter={self.counter})"

    def stream(self, name: str) -> "SeededRng":
        """Independent child stream; does not advance this stream."""
        child = mix64(np.array([self.seed ^ fnv1a64(name)], dtype=np.uint64))[0]
        return SeededRng(int(child))

    def next_u64(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            state = np.uint64(self.seed) + idx * _GAMMA
        return mix64(state)

    def uniform(self, size) -> np.ndarray:
        shape = (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape, dtype=np.int64))
        bits = self.next_u64(n) >> np.uint64(11)
        return (bits.astype(np.float64) * 2.0**-53).reshape(shape)

    def normal(self, size, sigma: float = 1.0) -> np.ndarray:
        if sigma < 0:
            raise ParameterError(f"sigma must be >= 0, got {sigma}")
        shape = (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape, dtype=np.int64))
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs).reshape(pairs, 2)
        r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        theta = 2.0 * np.pi * u[:, 1]
        z = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1).reshape(-1)[:n]
        return (sigma * z).reshape(shape)

    def integers(self, high: int, size) -> np.ndarray:
        """Integers in ``[0, high)``."""
        if high <= 0:
            raise ParameterError("high must be positive")
        return np.minimum((self.uniform(size) * high).astype(np.int64), high - 1)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform(n), kind="stable")

    def choice(self, n: int, m: int) -> np.ndarray:
        """``m`` distinct indices from ``range(n)``."""
        if m > n:
            raise ParameterError(f"cannot draw {m} distinct items from {n}")
        return self.permutation(n)[:m]

    def bernoulli(self, p: float, size) -> np.ndarray:
        return self.uniform(size) < p
