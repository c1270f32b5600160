"""Seed-stream plumbing.

Every source of randomness in the package is a PCG64 generator derived from
a root seed plus a structural key (tree index, trial index, fold index...).
Results are therefore bit-reproducible and independent of execution order
or worker count.
"""

from __future__ import annotations

import numpy as np


def seed_seq(seed: int, *key: int) -> np.random.SeedSequence:
    """SeedSequence for (seed, key); identical inputs give identical streams."""
    return np.random.SeedSequence(entropy=seed, spawn_key=tuple(key))


def rng_for(seed: int, *key: int) -> np.random.Generator:
    """Independent PCG64 stream addressed by (seed, key)."""
    return np.random.Generator(np.random.PCG64(seed_seq(seed, *key)))


def kernel_seed(seed: int, *key: int) -> int:
    """A 32-bit seed for the in-kernel (numba) generator, from (seed, key).

    Drawn from a spawned child so it never collides with the words PCG64
    consumes for the same key.
    """
    return int(seed_seq(seed, *key).spawn(1)[0].generate_state(1)[0])


def derive_seed(seed: int, *key: int) -> int:
    """A fresh 64-bit root seed for a nested component, from (seed, key)."""
    state = seed_seq(seed, *key).generate_state(2, np.uint64)
    return int(state[0] ^ state[1])


def round_half_up(x: float) -> int:
    """round() with ties away from zero, used for all fraction-to-count math."""
    return int(np.floor(x + 0.5))
