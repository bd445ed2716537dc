"""Counter-based SplitMix64 generator.

The n-th output of a stream seeded with ``s`` is ``mix(s + n * GOLDEN)``
for n = 1, 2, ...  with the standard SplitMix64 finalizer::

    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z =  z ^ (z >> 31)

all arithmetic modulo 2**64.  Because each output depends only on the seed
and its position, blocks of draws are produced with vectorized uint64 numpy
arithmetic and the stream is identical on every platform.

Derived floats:

* uniform in [0, 1): ``(u >> 11) * 2**-53``
* normal: Box-Muller on pairs of uniforms, ``u1`` mapped to (0, 1].
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_TWO_M53 = 2.0**-53


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def mix64(value: int) -> int:
    """Scalar SplitMix64 finalizer; used to derive child seeds."""
    return int(_mix(np.array([value & MASK64], dtype=np.uint64))[0])


class Rng:
    """Deterministic single-owner random stream."""

    def __init__(self, seed: int):
        self.seed = int(seed) & MASK64
        self.counter = 0

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, counter={self.counter})"

    def next_u64(self, n: int) -> np.ndarray:
        if n < 0:
            raise ValueError("n must be non-negative")
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            z = np.uint64(self.seed) + idx * np.uint64(GOLDEN)
            return _mix(z)

    def random(self, shape=()) -> np.ndarray:
        n = int(np.prod(shape, dtype=np.int64)) if shape != () else 1
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * _TWO_M53
        return u.reshape(shape) if shape != () else u[0]

    def uniform(self, shape, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        if not lo < hi:
            raise ValueError(f"uniform requires lo < hi, got lo={lo}, hi={hi}")
        return lo + (hi - lo) * self.random(shape)

    def normal(self, shape, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        n = int(np.prod(shape, dtype=np.int64))
        m = (n + 1) // 2
        u1 = 1.0 - self.random((m,))
        u2 = self.random((m,))
        r = np.sqrt(-2.0 * np.log(u1))
        out = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])[:n]
        return mean + std * out.reshape(shape)

    def integers(self, n: int, size: int) -> np.ndarray:
        """``size`` draws from {0, ..., n-1}."""
        if n < 1:
            raise ValueError("n must be >= 1")
        return np.minimum((self.random((size,)) * n).astype(np.int64), n - 1)

    def sample_without_replacement(self, n: int, k: int) -> np.ndarray:
        """Partial Fisher-Yates; returns k distinct indices from range(n)."""
        if not 0 <= k <= n:
            raise ValueError(f"cannot draw {k} distinct items from {n}")
        perm = np.arange(n)
        u = self.random((k,))
        for i in range(k):
            j = i + min(int(u[i] * (n - i)), n - i - 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm[:k].copy()

    def spawn(self, key: int) -> "Rng":
        """Independent child stream; does not advance this stream."""
        return Rng(mix64(self.seed ^ mix64(key * GOLDEN + 0x632BE59BD9B4E019)))
