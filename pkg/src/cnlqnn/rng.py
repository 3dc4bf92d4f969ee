"""Named random streams derived from one master seed.

Each purpose gets its own counter-based generator keyed by ``(seed, purpose)``
so enabling or disabling one feature never shifts another feature's draws.
"""

import numpy as np

STREAMS = {
    "data": 1,
    "holdout": 2,
    "init": 3,
    "gumbel": 4,
    "cnl": 5,
    "batches": 6,
    "noise": 7,
    "surrogate": 8,
    "bootstrap": 9,
}


def stream(seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    """Generator for ``purpose``; ``index`` separates parallel tasks."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(STREAMS[purpose], int(index)))
    return np.random.Generator(np.random.Philox(ss))
