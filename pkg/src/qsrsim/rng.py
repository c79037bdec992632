"""Per-trajectory random streams derived from one master seed.

Trajectory ``i`` of a run seeded with ``master_seed`` draws from
``PCG64(SeedSequence(master_seed, spawn_key=(i,)))``. This is numpy's
documented splittable construction; it is stable across numpy releases and
independent of how trajectories are distributed over workers.
"""

from __future__ import annotations

import numpy as np

SEED_MAX = 2**64 - 1


def check_seed(seed: int) -> int:
    if int(seed) != seed or not 0 <= seed <= SEED_MAX:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    return int(seed)


def trajectory_seed(master_seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(check_seed(master_seed), spawn_key=(int(index),))


def trajectory_rng(master_seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(trajectory_seed(master_seed, index)))


def blocks(n_items: int, block_size: int) -> list[range]:
    """Fixed partition of ``range(n_items)``; the unit of work for worker pools."""
    return [range(a, min(a + block_size, n_items)) for a in range(0, n_items, block_size)]
