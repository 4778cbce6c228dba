"""Deterministic counter-based random streams.

Every source of randomness in the engine (dropout masks, parameter init,
synthetic scenes, shuffling) draws from an RngStream addressed by a seed and
a path of purpose tags, e.g. ``RngStream(7).substream("train", epoch, "mc",
proposal_id)``. The Philox key is derived by hashing (seed, path), so a
stream's output depends only on its address and its own draw order, never on
what other streams drew or on evaluation order. Identical (seed, path, draw
sequence) gives bit-identical output on every platform.
"""

from __future__ import annotations

import hashlib

import numpy as np


class RngStream:
    """A named, reproducible random stream backed by counter-based Philox."""

    def __init__(self, seed: int, path: tuple = ()):
        self.seed = int(seed)
        self.path = tuple(path)
        # an explicit SeedSequence keeps construction free of OS entropy
        # (Philox(key=...) would still read urandom for its base state)
        self._gen = np.random.Generator(
            np.random.Philox(seed=np.random.SeedSequence(self._entropy()))
        )

    def _entropy(self) -> int:
        text = str(self.seed) + "\x1f" + "/".join(str(p) for p in self.path)
        digest = hashlib.sha256(text.encode("utf-8")).digest()
        return int.from_bytes(digest[:16], "little")

    def substream(self, *tags) -> "RngStream":
        """Derive an independent stream addressed by this path plus tags."""
        return RngStream(self.seed, self.path + tags)

    def uniform(self, shape=None) -> np.ndarray | float:
        return self._gen.uniform(0.0, 1.0, size=shape)

    def normal(self, shape=None, scale: float = 1.0) -> np.ndarray | float:
        return self._gen.normal(0.0, scale, size=shape)

    def integers(self, low: int, high: int, shape=None):
        """Uniform integers in [low, high), matching range() conventions."""
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, options, shape=None):
        return self._gen.choice(options, size=shape)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, path={self.path!r})"
