"""Deterministic random number generation.

Everything stochastic in this package draws from SplitMix64 streams with
explicit seeds, so that any run is bit-reproducible from a single master
seed and results do not depend on Python's global RNG state or on numpy's
generator internals.

Streams are derived by hashing a purpose label (plus optional indices)
into the master seed, e.g. ``SplitMix64(stream_seed(seed, "judge", qid, i))``.
Two streams with different labels are statistically independent for all
practical purposes.
"""

from __future__ import annotations

import math
from typing import Sequence

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a_64(data: bytes) -> int:
    """64-bit FNV-1a hash of a byte string."""
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & _MASK64
    return h


def _mix(z: int) -> int:
    """SplitMix64 output scrambler (one finalization round)."""
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def stream_seed(master: int, *labels: str | int) -> int:
    """Derive a stream seed from a master seed and a purpose label.

    Labels are hashed with FNV-1a using a separator byte, so ("ab", "c")
    and ("a", "bc") map to different streams.
    """
    h = _FNV_OFFSET
    for label in labels:
        for b in str(label).encode("utf-8") + b"\x1f":
            h ^= b
            h = (h * _FNV_PRIME) & _MASK64
    return _mix((master ^ h) & _MASK64)


class SplitMix64:
    """SplitMix64 PRNG (public-domain reference algorithm).

    One ``normal()`` draw always consumes exactly two uniforms, so the
    stream position after n draws is input-independent.
    """

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK64
        return _mix(self._state)

    def uniform(self) -> float:
        """Uniform float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def uniform_in(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.uniform()

    def below(self, n: int) -> int:
        """Uniform integer in [0, n). Modulo bias is ~n/2^64, negligible."""
        if n <= 0:
            raise ValueError("below() requires n >= 1")
        return self.next_u64() % n

    def normal(self, mu: float = 0.0, sd: float = 1.0) -> float:
        """Gaussian via Box-Muller; consumes exactly two uniforms."""
        u1 = self.uniform()
        u2 = self.uniform()
        if u1 < 2.0**-53:
            u1 = 2.0**-53
        return mu + sd * math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def normals(self, n: int, mu: float = 0.0, sd: float = 1.0) -> list[float]:
        return [self.normal(mu, sd) for _ in range(n)]

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]

    def choice(self, items: Sequence):
        return items[self.below(len(items))]
