"""SplitMix64 random stream.

Every draw in the package (lexicon alternatives, blink intervals) comes from
this generator so that a given seed reproduces the same values on any
platform or in any language:

    state  <- (state + 0x9E3779B97F4A7C15) mod 2**64
    z      <- state
    z      <- (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9   mod 2**64
    z      <- (z ^ (z >> 27)) * 0x94D049BB133111EB   mod 2**64
    output <- z ^ (z >> 31)

``uniform()`` maps an output to [0, 1) as ``(output >> 11) * 2**-53``.
"""

from __future__ import annotations

import math

_MASK = 0xFFFFFFFFFFFFFFFF
_GAMMA = 0x9E3779B97F4A7C15


class SplitMix64:
    def __init__(self, seed: int) -> None:
        self.state = seed & _MASK

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def exponential(self, mean: float) -> float:
        """Inverse-CDF exponential draw with the given mean."""
        return -mean * math.log1p(-self.uniform())
