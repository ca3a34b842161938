"""Named random substreams derived from a single experiment seed.

Every source of randomness in a run (data shuffling, parameter init, dropout
masks, augmentation draws, synthesis) pulls from its own named generator so
that toggling one component never shifts another component's draws.
"""

import hashlib

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    """Deterministic generator for stream `name` under the experiment seed."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    tag = int.from_bytes(digest[:16], "little")
    ss = np.random.SeedSequence([int(seed) & ((1 << 63) - 1), tag])
    return np.random.Generator(np.random.PCG64(ss))
