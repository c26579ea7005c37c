"""Seeded, labeled random streams.

Every source of randomness in the package (weight init, shuffles, dropout,
synthetic data) draws from a ``RandomSource``: a 64-bit seed plus a string
label. The same (seed, label) pair always yields the same sequence, on any
platform; distinct labels derived from one seed give independent streams.
"""

from __future__ import annotations

import hashlib

import numpy as np


class RandomSource:
    """A reproducible random stream addressed by (seed, label)."""

    def __init__(self, seed: int, label: str = ""):
        if not 0 <= int(seed) < 2**64:
            raise ValueError(f"seed must fit in 64 bits, got {seed}")
        self.seed = int(seed)
        self.label = label

    def child(self, label: str) -> "RandomSource":
        """Derive an independent sub-stream."""
        joined = f"{self.label}/{label}" if self.label else label
        return RandomSource(self.seed, joined)

    def generator(self) -> np.random.Generator:
        """A fresh Generator positioned at the start of this stream."""
        digest = hashlib.sha256(
            self.seed.to_bytes(8, "little") + self.label.encode("utf-8")
        ).digest()
        words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(words)))

    def __repr__(self) -> str:
        return f"RandomSource(seed={self.seed}, label={self.label!r})"
