"""Named-stream seed splitting.

All randomness in the toolkit flows from a single 64-bit master seed.
Independent streams are carved out by hashing the master seed together
with a purpose string, so parallel or reordered work cannot perturb
reproducibility.
"""

import hashlib

import numpy as np


def stream_seed(master_seed: int, purpose: str) -> int:
    """Derive a 64-bit seed for the stream named by ``purpose``."""
    h = hashlib.sha256()
    h.update(int(master_seed).to_bytes(8, "little", signed=False))
    h.update(purpose.encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "little")


def rng_for(master_seed: int, purpose: str) -> np.random.Generator:
    """Generator seeded from the named stream."""
    return np.random.default_rng(stream_seed(master_seed, purpose))
