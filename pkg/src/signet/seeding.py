"""Stable seed derivation.

Deriving sub-seeds by hashing string parts keeps every pipeline stage
reproducible and order-independent (parallelizing over writers or batches
cannot change the streams). sha256 is used instead of hash() because the
latter is salted per process.
"""

import hashlib

import numpy as np


def stable_seed(*parts):
    """Deterministic 64-bit seed from the given parts."""
    text = "|".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def stable_rng(*parts):
    return np.random.default_rng(stable_seed(*parts))
