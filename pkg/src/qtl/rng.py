"""Portable seeded random numbers.

The generator is xoshiro256** (Blackman & Vigna) with its 256-bit state
expanded from a 64-bit seed by SplitMix64. Every draw is defined purely in
terms of 64-bit integer arithmetic, so a given seed yields the same stream on
any platform or in any language that implements the same two algorithms:

* ``next_u64``: xoshiro256** output.
* ``uniform``: ``(next_u64() >> 11) * 2**-53``, in [0, 1).
* ``below(n)``: rejection sampling on ``next_u64() % n``, unbiased.
* ``normal``: Box-Muller on two uniforms, returning the cosine branch first
  and caching the sine branch for the next call.
* ``permutation(n)``: Fisher-Yates, swapping from the top index downwards.
"""
from __future__ import annotations

import math

import numpy as np

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> tuple[int, int]:
    """One SplitMix64 step. Returns ``(new_state, output)``."""
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return x, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


def derive_seed(seed: int, *labels: int | str) -> int:
    """Mix labels into a seed so separate consumers get independent streams."""
    state = seed & MASK64
    for label in labels:
        for chunk in _label_words(label):
            state, out = splitmix64(state ^ chunk)
            state = out
    return state


def _label_words(label) -> list[int]:
    """Ints are one word; strings are packed 8 bytes per word, plus their length
    when longer than one word so that prefixes do not collide."""
    if not isinstance(label, str):
        return [label & MASK64]
    raw = label.encode("utf-8")
    words = [int.from_bytes(raw[i:i + 8].ljust(8, b"\0"), "little")
             for i in range(0, max(len(raw), 1), 8)]
    if len(raw) > 8:
        words.append(len(raw))
    return words


class Rng:
    """xoshiro256** stream seeded through SplitMix64."""

    def __init__(self, seed: int):
        self.seed = seed
        x = seed & MASK64
        s = []
        for _ in range(4):
            x, out = splitmix64(x)
            s.append(out)
        self._s = s
        self._spare: float | None = None

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def below(self, n: int) -> int:
        if n <= 0:
            raise ValueError("n must be positive")
        threshold = ((1 << 64) - n) % n
        while True:
            r = self.next_u64()
            if r >= threshold:
                return r % n

    def normal(self) -> float:
        if self._spare is not None:
            z, self._spare = self._spare, None
            return z
        u1 = 1.0 - self.uniform()  # (0, 1], keeps log finite
        u2 = self.uniform()
        r = math.sqrt(-2.0 * math.log(u1))
        self._spare = r * math.sin(2.0 * math.pi * u2)
        return r * math.cos(2.0 * math.pi * u2)

    def uniform_array(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        n = int(np.prod(shape, dtype=np.int64))
        vals = [low + (high - low) * self.uniform() for _ in range(n)]
        return np.array(vals, dtype=np.float64).reshape(shape)

    def normal_array(self, shape, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        n = int(np.prod(shape, dtype=np.int64))
        vals = [mean + std * self.normal() for _ in range(n)]
        return np.array(vals, dtype=np.float64).reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        idx = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.below(i + 1)
            idx[i], idx[j] = idx[j], idx[i]
        return np.array(idx, dtype=np.int64)
