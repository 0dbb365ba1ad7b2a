"""Counted seed splitting.

A run owns a single integer seed. Every sub-task derives its generator from
that seed plus a tuple of counters, so results do not depend on how tasks are
scheduled across workers.
"""
import numpy as np


def rng_for(seed: int, *counter: int) -> np.random.Generator:
    """Generator for the sub-task identified by ``counter`` under ``seed``"""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(c) for c in counter)))


def split_seed(seed: int, *counter: int) -> int:
    """Derive a plain integer seed for the sub-task ``counter``"""
    state = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(c) for c in counter)).generate_state(2)
    return int(state[0]) | (int(state[1]) << 32)

