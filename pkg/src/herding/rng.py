"""Reproducible random substreams.

Every random draw in the toolkit comes from a Philox (counter-based)
generator keyed by ``(seed, index, purpose)``.  Streams for different
realizations never depend on the order in which they are consumed, which is
what makes ensemble output independent of the worker count.
"""

from __future__ import annotations

import numpy as np

PURPOSES = {
    "population": 1,
    "dynamics": 2,
    "langevin": 3,
    "initial": 4,
}


def substream(seed: int, index: int, purpose: str) -> np.random.Generator:
    """Independent generator for one ``(seed, index, purpose)`` triple."""
    if seed < 0 or index < 0:
        raise ValueError("seed and index must be non-negative")
    tag = PURPOSES[purpose]
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index), tag))
    return np.random.Generator(np.random.Philox(key=seq.generate_state(2, np.uint64)))
