"""Deterministic 64-bit linear congruential generator.

Every seeded component (binary test pattern, synthetic warp sampling,
RANSAC index sampling) draws from this exact generator so that two runs
with the same seed produce bit-identical results on any platform.
"""
from __future__ import annotations

import math

_MULT = 6364136223846793005
_INC = 1442695040888963407
_MASK = (1 << 64) - 1
_TWO32 = 4294967296.0


class Lcg:
    """state' = state * 6364136223846793005 + 1442695040888963407 mod 2^64.

    Outputs are the high 32 bits of the state after each step.
    """

    __slots__ = ("_state", "_gauss_spare")

    def __init__(self, seed: int):
        self._state = seed & _MASK
        self._gauss_spare: float | None = None

    def next_u32(self) -> int:
        self._state = (self._state * _MULT + _INC) & _MASK
        return self._state >> 32

    def uniform(self) -> float:
        """Uniform float in [0, 1)."""
        return self.next_u32() / _TWO32

    def uniform_signed(self, magnitude: float) -> float:
        """Uniform float in [-magnitude, +magnitude)."""
        return (2.0 * self.uniform() - 1.0) * magnitude

    def gauss(self) -> float:
        """Standard normal deviate via Box-Muller; the sine mate is cached."""
        if self._gauss_spare is not None:
            z = self._gauss_spare
            self._gauss_spare = None
            return z
        u1 = (self.next_u32() + 1) / _TWO32  # (0, 1], keeps log() finite
        u2 = self.next_u32() / _TWO32
        r = math.sqrt(-2.0 * math.log(u1))
        self._gauss_spare = r * math.sin(2.0 * math.pi * u2)
        return r * math.cos(2.0 * math.pi * u2)

    def sample_distinct(self, n: int, k: int) -> list[int]:
        """k distinct indices in [0, n); duplicate draws are rejected."""
        if k > n:
            raise ValueError(f"cannot draw {k} distinct indices from {n}")
        chosen: list[int] = []
        while len(chosen) < k:
            j = self.next_u32() % n
            if j not in chosen:
                chosen.append(j)
        return chosen


def derive_pair_seed(master_seed: int, pair_ordinal: int) -> int:
    """Per-pair seed: master seed XOR the pair's canonical ordinal."""
    return (master_seed ^ pair_ordinal) & _MASK
