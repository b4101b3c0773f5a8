"""Splittable random streams.

Every consumer of randomness receives a :class:`Stream`.  Children are derived
from a parent by a ``(tag, *index)`` key, so two consumers with different keys
never share a generator, and the draw sequence of a child does not depend on
how many draws its siblings made.
"""
from __future__ import annotations

import zlib

import numpy as np


def _tag_key(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


class Stream:
    """A node in a tree of independent random streams rooted at a master seed."""

    __slots__ = ("seed", "key", "_rng")

    def __init__(self, seed: int, key: tuple[int, ...] = ()):
        if seed < 0:
            raise ValueError("seed must be non-negative")
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        self._rng: np.random.Generator | None = None

    def spawn(self, tag: str, *index: int) -> "Stream":
        return Stream(self.seed, self.key + (_tag_key(tag),) + tuple(index))

    @property
    def rng(self) -> np.random.Generator:
        if self._rng is None:
            ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.key)
            self._rng = np.random.Generator(np.random.PCG64(ss))
        return self._rng

    def __repr__(self) -> str:
        return f"Stream(seed={self.seed}, key={self.key})"


def as_stream(source: "Stream | int | None") -> Stream:
    if isinstance(source, Stream):
        return source
    return Stream(0 if source is None else int(source))


def chunk_sizes(total: int, workers: int) -> list[int]:
    """Split ``total`` items into ``workers`` contiguous chunks (first chunks larger)."""
    workers = max(1, int(workers))
    base, extra = divmod(int(total), workers)
    return [base + (1 if w < extra else 0) for w in range(workers)]
