"""Deterministic, addressable random streams.

Every source of randomness in the toolkit is an :class:`RngStream` keyed by
a root seed plus a derivation path (purpose tag, epoch, sample index, ...).
Identical paths always replay identical draw sequences, which is what makes
whole training runs bit-reproducible. Streams are backed by the counter-based
Philox generator, so derived streams are statistically independent.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["RngStream"]


def _path_entropy(part) -> int:
    """Map one path component (int or str) to a 64-bit entropy word."""
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFFFFFFFFFF
    if isinstance(part, str):
        digest = hashlib.blake2s(part.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little")
    raise TypeError(f"rng path components must be int or str, got {type(part)!r}")


class RngStream:
    """A deterministic random stream addressed by (seed, *path)."""

    def __init__(self, seed: int, *path):
        self.seed = int(seed)
        self.path = tuple(path)
        entropy = [self.seed & 0xFFFFFFFFFFFFFFFF] + [_path_entropy(p) for p in path]
        self._gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))

    def child(self, *path) -> "RngStream":
        """Derive an independent sub-stream; does not disturb this stream."""
        return RngStream(self.seed, *(self.path + tuple(path)))

    # thin wrappers over numpy's Generator so call sites stay tidy

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size=size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def gamma(self, shape, size=None):
        return self._gen.gamma(shape, 1.0, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, options, size=None):
        return self._gen.choice(options, size=size)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, path={self.path})"
