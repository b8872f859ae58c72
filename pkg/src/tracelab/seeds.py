"""Deterministic seed derivation.

Every stochastic component in the package draws its seed from a splitmix64
chain over a single root seed.  The chain is documented and fixed: the i-th
derived seed is the i-th output of splitmix64 started at the root.  Resamples,
epochs, and pipeline stages consume seeds by position, so results are
schedule-independent and bit-reproducible.
"""

from __future__ import annotations

from typing import Iterator

_MASK = (1 << 64) - 1


def splitmix64_next(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state once; returns (new_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, z ^ (z >> 31)


def seed_stream(root: int) -> Iterator[int]:
    """Infinite stream of derived 64-bit seeds for a root seed."""
    state = root & _MASK
    while True:
        state, out = splitmix64_next(state)
        yield out


def derive_seeds(root: int, n: int) -> list[int]:
    """First ``n`` seeds of the documented splitmix64 chain."""
    if n < 0:
        raise ValueError(f"cannot derive {n} seeds")
    stream = seed_stream(root)
    return [next(stream) for _ in range(n)]
