"""Named random substreams derived from one user-visible seed.

``substream(seed, "simulator", "trials", 3)`` always yields the same generator
for the same seed and name, independent of what else was drawn before, so any
part of a run can be repeated in isolation or scheduled in any order.
"""

from __future__ import annotations

import hashlib

import numpy as np

SEED_MASK = (1 << 64) - 1


def substream(seed: int, *names) -> np.random.Generator:
    key = ".".join(str(n) for n in names).encode()
    words = np.frombuffer(hashlib.sha256(key).digest()[:16], dtype="<u4")
    ss = np.random.SeedSequence(entropy=int(seed) & SEED_MASK,
                                spawn_key=tuple(int(w) for w in words))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed: int, *names) -> int:
    """A 64-bit child seed, for handing to code that takes an integer seed."""
    return int(substream(seed, "seed", *names).integers(0, 1 << 63))
