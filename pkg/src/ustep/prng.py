"""SplitMix64 seeding and the xoshiro256** generator, in pure integer arithmetic.

Pinning the algorithms (rather than relying on a library generator) keeps
generated datasets bit-identical across platforms and implementations.
"""

from __future__ import annotations

import math

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    """SplitMix64 output finaliser."""
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        return mix64(self.state)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class Xoshiro256StarStar:
    """xoshiro256** 1.0.

    ``uniform`` maps the top 53 bits to [0, 1). ``gauss`` uses the Box-Muller
    transform on ``u1 = 1 - uniform()`` and ``u2 = uniform()``; the second
    variate of each pair is cached and returned by the next call.
    """

    def __init__(self, state: list[int]):
        if len(state) != 4 or not any(state):
            raise ValueError("xoshiro256** needs four words, not all zero")
        self.s = [w & MASK64 for w in state]
        self._spare: float | None = None

    @classmethod
    def from_seed(cls, seed: int) -> "Xoshiro256StarStar":
        sm = SplitMix64(seed)
        return cls([sm.next() for _ in range(4)])

    def next(self) -> int:
        s = self.s
        result = (_rotl((s[1] * 5) & MASK64, 7) * 9) & MASK64
        t = (s[1] << 17) & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def uniform(self) -> float:
        return (self.next() >> 11) * (1.0 / (1 << 53))

    def gauss(self) -> float:
        if self._spare is not None:
            z, self._spare = self._spare, None
            return z
        u1 = 1.0 - self.uniform()
        u2 = self.uniform()
        r = math.sqrt(-2.0 * math.log(u1))
        self._spare = r * math.sin(2.0 * math.pi * u2)
        return r * math.cos(2.0 * math.pi * u2)


def stream_seed(seed: int, index: int) -> int:
    """Seed for the independent stream of item ``index`` under a master ``seed``."""
    return (seed & MASK64) ^ mix64((index * GOLDEN_GAMMA) & MASK64)


def stream(seed: int, index: int) -> Xoshiro256StarStar:
    return Xoshiro256StarStar.from_seed(stream_seed(seed, index))
