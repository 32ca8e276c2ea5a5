"""Seeded random streams built on numpy's PCG64 and SeedSequence.

A stream is identified by an entropy value plus a spawn key (a tuple of
labels). ``chain_stream(seed, i)`` and ``Stream.spawn(label)`` only extend the
spawn key, so every chain and sub-stream is reproducible from ``(seed, labels)``
alone and independent of how many draws other streams made.
"""

from __future__ import annotations

from typing import MutableSequence, Sequence, TypeVar

import numpy as np

T = TypeVar("T")

_MASK64 = (1 << 64) - 1


class Stream:
    """Scalar draws from one PCG64 generator."""

    __slots__ = ("entropy", "spawn_key", "_gen")

    def __init__(self, entropy: int, *spawn_key: int):
        self.entropy = int(entropy)
        self.spawn_key = tuple(int(k) for k in spawn_key)
        # negative seeds are folded into 64 bits; SeedSequence only takes nonnegative entropy
        seq = np.random.SeedSequence(self.entropy & _MASK64, spawn_key=self.spawn_key)
        self._gen = np.random.Generator(np.random.PCG64(seq))

    def random(self) -> float:
        """Uniform float in [0, 1)."""
        return float(self._gen.random())

    def normal(self) -> float:
        return float(self._gen.standard_normal())

    def integers(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        if n <= 0:
            raise ValueError("n must be positive")
        return int(self._gen.integers(n))

    def choice(self, seq: Sequence[T]) -> T:
        return seq[self.integers(len(seq))]

    def shuffle(self, items: MutableSequence) -> None:
        self._gen.shuffle(items)

    def spawn(self, label: int) -> "Stream":
        return Stream(self.entropy, *self.spawn_key, label)


def chain_stream(seed: int, chain_index: int) -> Stream:
    """Independent stream for one chain, keyed by ``(seed, chain_index)``."""
    return Stream(seed, chain_index)
