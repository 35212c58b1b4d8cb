"""Named random substreams.

Every random draw in the package comes from a generator built out of a
*seed record*: a master seed plus an integer key path such as
``(seed, STAGE1, r1, replicate)``.  Equal records give bit-identical
streams no matter which worker evaluates them or in which order, which is
what makes parallel runs reproducible.
"""

from __future__ import annotations

import numpy as np

# Stream tags.  Kept small and stable: changing one changes every result.
STAGE1 = 1
STAGE2 = 2
PILOT = 3
BASELINE_ONE = 4
BASELINE_TWO = 5
EXPERIMENT = 6
IMPORTANCE = 7

SeedRecord = tuple


def seed_record(seed, *key: int) -> SeedRecord:
    """Extend ``seed`` (an int or an existing record) by ``key``."""
    if isinstance(seed, tuple):
        base = seed
    else:
        base = (int(seed),)
    for k in key:
        if int(k) < 0:
            raise ValueError("substream keys must be non-negative")
    return base + tuple(int(k) for k in key)


def generator(seed) -> np.random.Generator:
    """Return the PCG64 generator named by ``seed`` (int or record)."""
    record = seed_record(seed)
    ss = np.random.SeedSequence(record[0], spawn_key=record[1:])
    return np.random.Generator(np.random.PCG64(ss))
