"""Counter-based random streams keyed by integers.

Streams are Philox generators seeded from ``SeedSequence((seed, *keys))``, so
``make_rng(base, cell, run)`` gives every experiment cell and run its own
stream regardless of the order in which cells are executed.
"""
from __future__ import annotations

import numpy as np


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    entropy = [int(seed)] + [int(k) for k in keys]
    if any(e < 0 for e in entropy):
        raise ValueError("seed and keys must be non-negative")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def spawn(rng: np.random.Generator, n: int):
    """``n`` independent child streams of ``rng``."""
    return [np.random.Generator(np.random.Philox(s)) for s in rng.bit_generator.seed_seq.spawn(n)]
