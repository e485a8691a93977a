"""Deterministic seed derivation for replication-parallel Monte Carlo.

Every stochastic routine takes an explicit 64-bit root seed; per-replication
streams are derived from (root, key...) so that results do not depend on
execution order or thread count.
"""

import numpy as np

__all__ = ["substream", "generator"]


def substream(root: int, *key: int) -> int:
    """Derive a 64-bit seed for the substream identified by `key`."""
    ss = np.random.SeedSequence(entropy=int(root), spawn_key=tuple(int(k) for k in key))
    lo, hi = ss.generate_state(2, np.uint32)
    return int((int(hi) << 32) | int(lo))


def generator(root: int, *key: int) -> np.random.Generator:
    """A numpy Generator on the substream identified by `key`."""
    ss = np.random.SeedSequence(entropy=int(root), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))
