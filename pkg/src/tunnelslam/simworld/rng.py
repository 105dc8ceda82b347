"""Deterministic random streams.

All randomness in the simulator flows from one experiment seed through
counter-based Philox generators. Independent streams are derived from the
seed plus a tuple of non-negative integer keys (robot id, scan index, ...),
so any scan can be regenerated in isolation and runs are reproducible
regardless of evaluation order.
"""

import numpy as np


def derive_rng(seed: int, *stream: int) -> np.random.Generator:
    """Generator for the sub-stream identified by (seed, *stream)."""
    key = tuple(int(s) for s in stream)
    if any(s < 0 for s in key):
        raise ValueError(f"stream keys must be non-negative, got {key}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))
