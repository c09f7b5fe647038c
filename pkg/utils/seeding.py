from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(global_seed: int, purpose: str, *keys: str | int) -> int:
    """
    Derive a 64-bit seed for one purpose from the global experiment seed.

    The derivation is a BLAKE2b digest of ``global_seed/purpose/keys...``; it
    is stable across Python versions and platforms.
    """
    text = "/".join([str(global_seed), purpose, *(str(k) for k in keys)])
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator; Gaussian draws use NumPy's ziggurat sampler."""
    return np.random.Generator(np.random.PCG64(seed))
