"""Stable 64-bit hashing and mixing primitives.

Everything here is bit-exact across platforms: FNV-1a 64 for key hashing and
shard placement, splitmix64 as the scrambler behind deterministic value
initialization. Scalar and vectorized (uint64 numpy) variants compute
identical results.
"""

from __future__ import annotations

import numpy as np

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3

_MASK64 = 0xFFFFFFFFFFFFFFFF
_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15
_SPLITMIX_M1 = 0xBF58476D1CE4E5B9
_SPLITMIX_M2 = 0x94D049BB133111EB

_UNIT_SCALE = 2.0 ** -53


def fnv1a64(data: bytes) -> int:
    """FNV-1a 64-bit hash of a byte string."""
    h = FNV64_OFFSET
    for b in data:
        h = ((h ^ b) * FNV64_PRIME) & _MASK64
    return h


def fnv1a64_u64s(*values: int) -> int:
    """FNV-1a 64 over the little-endian 8-byte encoding of each unsigned value."""
    h = FNV64_OFFSET
    for v in values:
        v &= _MASK64
        for shift in range(0, 64, 8):
            h = ((h ^ ((v >> shift) & 0xFF)) * FNV64_PRIME) & _MASK64
    return h


def fnv1a64_u64_arrays(*columns: np.ndarray) -> np.ndarray:
    """Vectorized fnv1a64_u64s: one hash per row of the aligned uint64 columns."""
    prime = np.uint64(FNV64_PRIME)
    byte_mask = np.uint64(0xFF)
    h = np.full(np.shape(columns[0]), FNV64_OFFSET, dtype=np.uint64)
    for col in columns:
        c = np.asarray(col).astype(np.uint64, copy=False)
        for shift in range(0, 64, 8):
            h = (h ^ ((c >> np.uint64(shift)) & byte_mask)) * prime
    return h


def splitmix64(x: int) -> int:
    """One splitmix64 scramble of a 64-bit value."""
    z = (x + _SPLITMIX_GAMMA) & _MASK64
    z = ((z ^ (z >> 30)) * _SPLITMIX_M1) & _MASK64
    z = ((z ^ (z >> 27)) * _SPLITMIX_M2) & _MASK64
    return z ^ (z >> 31)


def splitmix64_array(x: np.ndarray) -> np.ndarray:
    """Vectorized splitmix64 over a uint64 array."""
    z = np.asarray(x).astype(np.uint64, copy=False) + np.uint64(_SPLITMIX_GAMMA)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_SPLITMIX_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_SPLITMIX_M2)
    return z ^ (z >> np.uint64(31))


def unit_from_u64(x: int) -> float:
    """Map a 64-bit value to [0, 1) using its top 53 bits."""
    return (x >> 11) * _UNIT_SCALE


def unit_from_u64_array(x: np.ndarray) -> np.ndarray:
    """Vectorized unit_from_u64."""
    return (np.asarray(x).astype(np.uint64, copy=False) >> np.uint64(11)).astype(
        np.float64
    ) * _UNIT_SCALE
