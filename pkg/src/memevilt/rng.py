"""Deterministic random streams.

Every stream is a Philox4x64 counter-based generator keyed by ``(seed, stream)``.
Philox output depends only on the key and the counter, so identical keys give
identical sequences on every platform and numpy build.

Child streams are derived with a SplitMix64 finalizer over the parent key and a
label (an integer, or a string hashed with BLAKE2b), which makes derivation a
pure function of its inputs and independent of how much the parent was used.
"""

from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def _label_to_int(label) -> int:
    if isinstance(label, (bool, np.bool_)):
        raise TypeError("stream labels must be int or str")
    if isinstance(label, (int, np.integer)):
        return int(label) & MASK64
    if isinstance(label, str):
        digest = hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little")
    raise TypeError(f"stream labels must be int or str, got {type(label).__name__}")


class RngStream:
    """A seeded random stream; ``derive`` makes independent child streams."""

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & MASK64
        self.stream = int(stream) & MASK64
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream={self.stream:#x})"

    def derive(self, *labels) -> "RngStream":
        stream = self.stream
        for label in labels:
            stream = _splitmix64(stream ^ _splitmix64(_label_to_int(label)))
        return RngStream(self.seed, stream)

    def random(self, size=None):
        return self._gen.random(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def truncated_normal(self, shape, std=0.02, bound=2.0):
        """Normal(0, std) restricted to |x| <= bound*std by redrawing."""
        out = self._gen.normal(0.0, 1.0, size=shape)
        bad = np.abs(out) > bound
        while bad.any():
            out[bad] = self._gen.normal(0.0, 1.0, size=int(bad.sum()))
            bad = np.abs(out) > bound
        return out * std
