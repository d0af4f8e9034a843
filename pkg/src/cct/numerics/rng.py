"""Seeded random streams.

Every stream is a numpy ``Generator`` driven by PCG64, seeded through a
``SeedSequence`` built from ``(seed, key)``. Child streams derive from the
same seed with an extended key, so independent consumers (weight init,
per-epoch shuffles, dropout masks) never share or perturb each other's draws.
"""

from __future__ import annotations

import numpy as np

ALGORITHM = "PCG64/SeedSequence"


class RngStream:
    algorithm = ALGORITHM

    def __init__(self, seed: int, key: tuple = ()):
        if not isinstance(seed, (int, np.integer)) or seed < 0 or seed >= 2**64:
            raise ValueError(f"seed must be an integer in [0, 2**64), got {seed!r}")
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        self.draws = 0
        seq = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self._gen = np.random.Generator(np.random.PCG64(seq))

    def child(self, *key: int) -> "RngStream":
        """Independent stream addressed by ``key`` under the same seed."""
        return RngStream(self.seed, self.key + tuple(key))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, key={self.key}, draws={self.draws})"

    def _count(self, shape) -> None:
        self.draws += int(np.prod(shape, dtype=np.int64)) if shape != () else 1

    def uniform(self, shape=(), dtype=np.float64) -> np.ndarray:
        self._count(shape)
        return self._gen.random(shape, dtype=np.dtype(dtype).type)

    def normal(self, shape=(), dtype=np.float64) -> np.ndarray:
        self._count(shape)
        return self._gen.standard_normal(shape, dtype=np.dtype(dtype).type)

    def integers(self, low, high, shape=None) -> np.ndarray:
        out = self._gen.integers(low, high, size=shape)
        self._count(np.shape(out))
        return out

    def truncated_normal(self, shape, std: float, bound: float = 2.0,
                         dtype=np.float64) -> np.ndarray:
        """Normal(0, std) restricted to [-bound*std, bound*std] by resampling."""
        out = self.normal(shape)
        bad = np.abs(out) > bound
        while bad.any():
            out[bad] = self.normal(int(bad.sum()))
            bad = np.abs(out) > bound
        return (out * std).astype(dtype, copy=False)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of ``range(n)``."""
        perm = np.arange(n)
        if n < 2:
            return perm
        # swap partner for position i is uniform on [0, i]
        partners = self.integers(0, np.arange(n, 1, -1))
        for pos, j in zip(range(n - 1, 0, -1), partners.tolist()):
            perm[pos], perm[j] = perm[j], perm[pos]
        return perm
