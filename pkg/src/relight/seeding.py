"""Deterministic derivation of rng streams from one root seed.

Every random draw in the toolkit comes from a stream keyed by the root
seed plus a purpose tag (and loop indices where applicable), so runs
replay bitwise and data batches do not depend on which loss terms are
enabled.
"""

from __future__ import annotations

import zlib

import numpy as np
import torch


def derive_seed(seed: int, tag: str) -> int:
    return (seed * 0x9E3779B1 + zlib.crc32(tag.encode())) % (2 ** 63)


def torch_generator(seed: int, tag: str) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(derive_seed(seed, tag))
    return gen


def seed_torch(seed: int, tag: str) -> None:
    torch.manual_seed(derive_seed(seed, tag))


def data_rng(seed: int, tag: str, *indices: int) -> np.random.Generator:
    return np.random.default_rng([seed & 0xFFFFFFFF, zlib.crc32(tag.encode()), *indices])
