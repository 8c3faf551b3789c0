"""Seeded random streams.

Every random draw in the simulator comes from a generator keyed by
``(master_seed, purpose, *ids)``.  Two calls with the same key always yield the
same stream, independent of call order or worker scheduling.
"""

from __future__ import annotations

import numpy as np

# Stream purposes. Values are part of the reproducibility contract; never renumber.
DATA = 1
PARTITION = 2
CODING = 3
CHANNEL = 4
DEVICE = 5
SERVER = 6
INIT = 7
ARRIVAL = 8

PURPOSE_NAMES = {
    DATA: "data",
    PARTITION: "partition",
    CODING: "coding",
    CHANNEL: "channel",
    DEVICE: "device",
    SERVER: "server",
    INIT: "init",
    ARRIVAL: "arrival",
}


def stream(master_seed: int, purpose: int, *ids: int) -> np.random.Generator:
    """Return the generator for ``(master_seed, purpose, *ids)``."""
    if master_seed < 0:
        raise ValueError(f"seed must be non-negative, got {master_seed}")
    key = (int(purpose),) + tuple(int(i) for i in ids)
    return np.random.default_rng(np.random.SeedSequence(int(master_seed), spawn_key=key))


def derived_seed(master_seed: int, purpose: int, *ids: int) -> int:
    """A 63-bit integer seed for the keyed stream (recorded in run manifests)."""
    key = (int(purpose),) + tuple(int(i) for i in ids)
    ss = np.random.SeedSequence(int(master_seed), spawn_key=key)
    return int(ss.generate_state(1, dtype=np.uint64)[0]) >> 1


def as_generator(seed: int | np.random.Generator) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(int(seed))
