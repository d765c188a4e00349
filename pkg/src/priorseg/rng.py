"""Deterministic RNG streams derived from a master seed."""

import numpy as np


def derive_rng(master_seed, *stream):
    """Return an independent Generator for (master_seed, *stream).

    The same (seed, stream) tuple always yields the same draw sequence, and
    distinct stream tuples give statistically independent streams, so
    per-(case, organ) sampling can run in any order or in parallel.
    """
    path = (int(master_seed),) + tuple(int(s) for s in stream)
    return np.random.default_rng(np.random.SeedSequence(path))
