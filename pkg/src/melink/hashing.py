"""Deterministic 64-bit hashing primitives.

FNV-1a seeds the hashed-token embeddings and fingerprints checkpoint /
config / dataset bytes; splitmix64 expands a single 64-bit state into a
reproducible stream.  Everything is defined on little-endian byte order so
results are identical across platforms.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3

_SM_GAMMA = 0x9E3779B97F4A7C15
_SM_MIX1 = 0xBF58476D1CE4E5B9
_SM_MIX2 = 0x94D049BB133111EB


def fnv1a64(data: bytes, state: int = FNV_OFFSET) -> int:
    """64-bit FNV-1a over `data`, optionally chained from a prior state."""
    h = state
    for b in data:
        h ^= b
        h = (h * FNV_PRIME) & _MASK64
    return h


def fnv1a64_hex(data: bytes) -> str:
    return f"{fnv1a64(data):016x}"


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state once; returns (new_state, output)."""
    state = (state + _SM_GAMMA) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * _SM_MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _SM_MIX2) & _MASK64
    return state, z ^ (z >> 31)


def splitmix64_stream(seed: int, n: int) -> np.ndarray:
    """First `n` splitmix64 outputs for `seed`, as uint64.

    The state advances linearly (seed + k*gamma), so the whole stream
    vectorizes: only the output mix is applied elementwise.
    """
    with np.errstate(over="ignore"):
        ks = np.arange(1, n + 1, dtype=np.uint64)
        z = np.uint64(seed & _MASK64) + ks * np.uint64(_SM_GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_SM_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_SM_MIX2)
        return z ^ (z >> np.uint64(31))


def uniform_pm1(seed: int, n: int) -> np.ndarray:
    """`n` deterministic floats in [-1, 1) drawn from splitmix64(seed).

    Uses the top 53 bits of each output, matching the usual u64-to-double
    construction, computed in float64.
    """
    bits = splitmix64_stream(seed, n) >> np.uint64(11)
    return bits.astype(np.float64) * (2.0 / 9007199254740992.0) - 1.0
