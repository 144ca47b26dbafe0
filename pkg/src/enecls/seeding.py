"""Seeded random streams.

All randomness flows from one 64-bit seed through numpy's PCG64 generator.
Independent purposes (parameter init, shuffling, fixtures, ...) get
independent streams derived via ``SeedSequence`` spawn keys, so adding a
consumer never perturbs the draws of another.
"""

import numpy as np

STREAM_INIT_ENCODER = 1
STREAM_INIT_HEAD = 2
STREAM_SHUFFLE = 3
STREAM_HOLDOUT = 4
STREAM_GRADCHECK = 5
STREAM_FIXTURE = 6
STREAM_SPLIT = 7


def stream(seed: int, key: int, *extra: int) -> np.random.Generator:
    """PCG64 generator for stream ``key`` (plus optional sub-keys) of ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(key, *extra)))
