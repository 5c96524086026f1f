"""Random-number plumbing.

Every stochastic routine takes a ``numpy.random.Generator`` backed by
PCG64; seeds are expanded through ``SeedSequence`` so independent
substreams can be spawned for parallel lanes or separate configurations.
"""

from __future__ import annotations

import numpy as np


def make_rng(seed=None) -> np.random.Generator:
    """Accept ``None``, an int, a ``SeedSequence`` or an existing Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.Generator(np.random.PCG64(seed))


def spawn(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(n)]


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministic 63-bit child seed of ``seed`` for the integer path ``keys``."""
    ss = np.random.SeedSequence(seed, spawn_key=tuple(keys))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))
