"""Portable deterministic randomness for per-pair sampling.

A splitmix64 stream seeded from (run seed, pair id) keeps every pair's
draws independent of corpus order and identical across platforms and
Python versions; the stdlib ``hash`` and ``random`` are deliberately
avoided because neither is stable across processes.
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


class SplitMix64:
    """The splitmix64 generator: a 64-bit counter pushed through a mixer."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        """Uniform integer in [0, n) without modulo bias."""
        if n <= 0:
            raise ValueError("below() needs n >= 1")
        limit = _MASK64 - (_MASK64 + 1) % n
        while True:
            v = self.next_u64()
            if v <= limit:
                return v % n

    def sample(self, population: list, k: int) -> list:
        """k distinct elements, drawn without replacement (partial Fisher-Yates)."""
        if k > len(population):
            raise ValueError(f"cannot sample {k} from {len(population)}")
        pool = list(population)
        picked = []
        for _ in range(k):
            i = self.below(len(pool))
            picked.append(pool.pop(i))
        return picked


def pair_rng(seed: int, pair_id: str) -> SplitMix64:
    """Stream for one pair: run seed folded with an FNV-1a hash of the pair id."""
    return SplitMix64((seed ^ fnv1a64(pair_id.encode("utf-8"))) & _MASK64)
