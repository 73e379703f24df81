"""Deterministic seeded randomness.

All stochastic choices in this package (corpus generation, corruption,
boundary subsampling, center jitter) run off SplitMix64, a public-domain
64-bit generator.  The algorithm is tiny and has well-known reference
outputs, so corpora and experiments can be regenerated bit-identically
from a manifest seed, in this package or any other language.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


class SplitMix64:
    """SplitMix64 PRNG (Steele, Lea & Flood's mix function)."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return (z ^ (z >> 31)) & _MASK64

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        """Uniform float in [lo, hi) with 53-bit resolution."""
        u = self.next_u64() >> 11
        return lo + (hi - lo) * (u / float(1 << 53))

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in the inclusive range [lo, hi]."""
        lo = int(lo)
        hi = int(hi)
        if hi < lo:
            raise ValueError(f"empty range [{lo}, {hi}]")
        span = hi - lo + 1
        # Rejection sampling to avoid modulo bias.
        limit = ((1 << 64) // span) * span
        while True:
            u = self.next_u64()
            if u < limit:
                return lo + (u % span)

    def choice(self, n: int, k: int) -> np.ndarray:
        """k distinct indices from range(n), by partial Fisher-Yates.

        The returned indices are sorted ascending so downstream consumers
        see a canonical order.
        """
        if not 0 <= k <= n:
            raise ValueError(f"cannot draw {k} from {n}")
        idx = np.arange(n)
        for i in range(k):
            j = self.randint(i, n - 1)
            idx[i], idx[j] = idx[j], idx[i]
        picked = idx[:k]
        picked.sort()
        return picked

    def spawn(self) -> "SplitMix64":
        """Child generator with an independent stream."""
        return SplitMix64(self.next_u64())
