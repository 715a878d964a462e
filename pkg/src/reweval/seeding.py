"""Seed derivation. Every random stream is a Philox generator keyed by a seed."""
from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(seed: int, label: str) -> int:
    """Stable 64-bit sub-seed for a named consumer of ``seed``."""
    digest = hashlib.sha256(f"{int(seed)}/{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def generator(seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator for ``seed``; ``key`` selects an independent substream."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))))
