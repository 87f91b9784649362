"""Seed derivation for experiment cells.

``derive_seed(master, tag, cell)`` is the first 8 bytes (little endian) of
BLAKE2b over the UTF-8 string ``"{master}:{tag}:{cell}"``.  The resulting
integer seeds a Philox generator through ``numpy.random.SeedSequence``.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master_seed: int, tag: str, cell_index: int = 0) -> int:
    key = f"{int(master_seed)}:{tag}:{int(cell_index)}".encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


def cell_rng(master_seed: int, tag: str, cell_index: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(derive_seed(master_seed, tag, cell_index))))
