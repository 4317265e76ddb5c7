"""Seeded randomness.

All streams come from numpy's PCG64 bit generator, whose output for a given
seed is fixed across platforms.  Child streams are derived through
``SeedSequence`` keyed by integers, so independent components never share a
stream.
"""
from __future__ import annotations

import zlib

import numpy as np

ALGORITHM = "PCG64"


def make_rng(seed: int, *keys) -> np.random.Generator:
    """Generator for ``seed`` and an optional tuple of stream keys."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_key(k) for k in keys]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def derive_seed(seed: int, *keys) -> int:
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_key(k) for k in keys]
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)[0])


def _key(k) -> int:
    if isinstance(k, (int, np.integer)):
        return int(k) & 0xFFFFFFFF
    return zlib.crc32(str(k).encode("utf-8"))
