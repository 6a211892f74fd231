"""Deterministic seed derivation.

Every stochastic step in the framework (init, shuffling, selection,
partitioning) pulls its seed through `derive_seed` so that one campaign or
sweep seed fans out into independent, reproducible streams.
"""

from __future__ import annotations

import numpy as np

# Fixed stream tags so call sites don't collide by accident.
STREAM_INIT = 0
STREAM_SELECTION = 1
STREAM_VALIDATION = 2
STREAM_TIEBREAK = 3


def derive_seed(*parts: int) -> int:
    """Mix integer parts into a single 31-bit seed (stable across runs)."""
    ss = np.random.SeedSequence([int(p) & 0xFFFFFFFF for p in parts])
    return int(ss.generate_state(1, dtype=np.uint32)[0]) & 0x7FFFFFFF


def rng_for(*parts: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))
