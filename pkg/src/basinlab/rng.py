"""Deterministic RNG stream derivation.

Every stochastic operation draws from a generator derived from
(master_seed, purpose_tag, *indices). Streams are independent of execution
order, so parallel sweeps reproduce serial results bit for bit.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream(master_seed: int, tag: str, *indices: int) -> np.random.Generator:
    """Generator keyed by a master seed, a purpose tag and integer indices."""
    key = [zlib.crc32(tag.encode("utf-8"))]
    for ix in indices:
        if ix < 0:
            raise ValueError(f"stream indices must be non-negative, got {ix}")
        key.append(int(ix) & 0xFFFFFFFF)
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(key))
    return np.random.default_rng(ss)
