"""Splittable seed derivation.

Every random stream in the package is keyed by ``(master, tag, *indices)``
so that sampling, initialisation, shuffling and noise never share a stream
and any single model can be rebuilt without replaying the others.
"""
from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def derive(master: int, tag: str, *indices: int) -> int:
    """Return a 63-bit child seed for ``(master, tag, *indices)``."""
    key = [int(master) & _MASK64, zlib.crc32(tag.encode("utf-8"))]
    key.extend(int(i) & _MASK64 for i in indices)
    words = np.random.SeedSequence(key).generate_state(2, dtype=np.uint32)
    return ((int(words[0]) << 32) | int(words[1])) >> 1


def rng(master: int, tag: str, *indices: int) -> np.random.Generator:
    return np.random.default_rng(derive(master, tag, *indices))


def alpha_key(alpha: float) -> int:
    """Integer key for a ratio, stable across float spellings like 0.1 vs 0.10."""
    return int(round(alpha * 1_000_000))
