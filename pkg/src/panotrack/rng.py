"""Portable counter-based random numbers.

The generator is SplitMix64 evaluated at explicit counters: draw ``i`` of a
stream with key ``k`` is ``mix64(k + (i + 1) * 0x9E3779B97F4A7C15)`` in
wrapping 64-bit arithmetic, where ``mix64`` is the SplitMix64 finalizer

    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z =  z ^ (z >> 31)

The key is ``mix64(seed * GAMMA) ^ mix64(stream + 1)``.  Uniforms take the top
53 bits, normals use the cosine branch of Box-Muller on two consecutive
uniforms, Poisson draws use Knuth's product-of-uniforms method.  Integer
arithmetic is exact on every platform; only the Box-Muller ``log``/``cos``
calls touch libm.
"""
from __future__ import annotations

import numpy as np

GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def mix64(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))


class CounterRNG:
    """Seeded stream of SplitMix64 draws with a public counter."""

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        k1 = mix64(np.array([(self.seed * 0x9E3779B97F4A7C15) & _MASK], dtype=np.uint64))
        k2 = mix64(np.array([(self.stream + 1) & _MASK], dtype=np.uint64))
        self.key = (k1 ^ k2)[0]
        self.counter = 0

    def spawn(self, stream: int) -> "CounterRNG":
        return CounterRNG(self.seed, stream)

    def raw(self, n: int) -> np.ndarray:
        ctr = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return mix64(self.key + ctr * GAMMA)

    def uniform(self, size=None, low: float = 0.0, high: float = 1.0):
        n = 1 if size is None else int(np.prod(size))
        u = (self.raw(n) >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
        u = low + (high - low) * u
        return float(u[0]) if size is None else u.reshape(size)

    def normal(self, size=None, loc: float = 0.0, scale: float = 1.0):
        n = 1 if size is None else int(np.prod(size))
        u = self.uniform(2 * n).reshape(n, 2)
        z = np.sqrt(-2.0 * np.log(1.0 - u[:, 0])) * np.cos(2.0 * np.pi * u[:, 1])
        z = loc + scale * z
        return float(z[0]) if size is None else z.reshape(size)

    def poisson(self, lam: float) -> int:
        if lam <= 0:
            return 0
        limit = np.exp(-lam)
        k, p = 0, 1.0
        while True:
            p *= self.uniform()
            if p <= limit:
                return k
            k += 1

    def integers(self, high: int, size=None):
        u = self.uniform(size)
        return (np.floor(np.asarray(u) * high)).astype(np.int64) if size is not None else int(u * high)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform(n), kind="stable")
