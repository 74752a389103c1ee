"""
Seeded, splittable random streams.

Each consumer asks for a generator by (seed, stream, *index); streams never
share state, so concurrent draws with distinct keys are reproducible.
"""

from __future__ import annotations

from enum import IntEnum

import numpy as np


class Stream(IntEnum):
    BATCH = 0
    FEATURES = 1
    WEIGHTS = 2
    NOISE = 3
    SPLIT = 4
    TARGET = 5
    INPUTS = 6
    STARTS = 7
    OBSERVATION = 8


def make_rng(seed: int, stream: Stream, *index: int) -> np.random.Generator:
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    seq = np.random.SeedSequence(int(seed), spawn_key=(int(stream), *(int(i) for i in index)))
    return np.random.Generator(np.random.Philox(seq))
