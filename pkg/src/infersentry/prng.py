"""splitmix64 pseudo-random stream.

Chosen because it is trivial to reimplement bit-for-bit in any language, so a
backend living in another process (or written in another runtime entirely) can
regenerate the exact model weights and test inputs from the seeds alone. All
arithmetic is masked to 64 bits.
"""

from __future__ import annotations

MASK64 = (1 << 64) - 1

_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def splitmix64_step(state: int) -> tuple[int, int]:
    """Advance the stream one step. Returns (new_state, output)."""
    state = (state + _GAMMA) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return state, z ^ (z >> 31)


def unit_from_u64(u: int) -> float:
    # Top 53 bits scaled into [0, 1); the standard double mapping.
    return (u >> 11) * 2.0**-53


class SplitMix64:
    """Stateful wrapper around splitmix64_step."""

    __slots__ = ("_state",)

    def __init__(self, seed: int) -> None:
        self._state = seed & MASK64

    def next_u64(self) -> int:
        self._state, out = splitmix64_step(self._state)
        return out

    def next_unit(self) -> float:
        """Next draw mapped to a double in [0, 1)."""
        return unit_from_u64(self.next_u64())
