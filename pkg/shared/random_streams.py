"""
Counter-based random streams.

Each independent unit of work (a trajectory, a window, a sample block, an
experiment) draws from its own Philox stream keyed by the master seed and
the unit's index, so results do not depend on scheduling order.
"""

import numpy as np

# Stream families; keeps e.g. trajectory 3 and sample block 3 apart.
TRAJECTORY = 0
SAMPLE_BLOCK = 1
TRAINING = 2
EXPERIMENT = 3
SUBSAMPLE = 4
INITIAL_STATE = 5


def stream_rng(master_seed: int, *key: int) -> np.random.Generator:
    """Return the Philox generator for (master_seed, *key)."""
    if master_seed < 0:
        raise ValueError(f"seed must be non-negative, got {master_seed}")
    seq = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(seq))


def derive_seed(master_seed: int, *key: int) -> int:
    """Derive a 63-bit child seed for (master_seed, *key)."""
    seq = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))
    return int(seq.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
