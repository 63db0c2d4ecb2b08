"""Counter-based random streams.

Every block of draws is addressed by ``(seed, purpose, step, slot)``: the Philox
key carries ``(seed, purpose)`` and the counter carries ``(draw, slot, step)``.
Inside a block, particle ``k`` reads element ``k`` (row ``k`` for vector draws),
so its numbers do not depend on how particle updates are split across threads.
Normals come from the inverse CDF of a single uniform, which keeps one draw per
number and the positional layout intact.
"""
from __future__ import annotations

from enum import IntEnum

import numpy as np
from scipy.special import ndtri

_MASK64 = (1 << 64) - 1
_TINY = 2.0 ** -54


class Purpose(IntEnum):
    INIT = 1
    INIT_PAIR = 2
    NOISE = 3
    REGIME = 4
    REGIME_PAIR = 5
    SUBSAMPLE = 6


class Streams:
    """Factory of reproducible Philox generators keyed by one 64-bit seed."""

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64

    def __repr__(self):
        return f"Streams(seed={self.seed})"

    def generator(self, purpose: int, step: int = 0, slot: int = 0) -> np.random.Generator:
        key = np.array([self.seed, int(purpose)], dtype=np.uint64)
        counter = np.array([0, int(slot), int(step), 0], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key, counter=counter))

    def uniform(self, purpose: int, step: int, slot: int, shape) -> np.ndarray:
        """Uniforms on [0, 1), one 64-bit draw each."""
        return self.generator(purpose, step, slot).random(shape)

    def normal(self, purpose: int, step: int, shape, slot: int = 0) -> np.ndarray:
        u = self.uniform(purpose, step, slot, shape)
        np.maximum(u, _TINY, out=u)
        return ndtri(u)


def uniform_source(streams: Streams, purpose: int, step: int, n: int):
    """Return ``draw(slot) -> (n,)`` uniforms for one step of a regime sampler."""

    def draw(slot: int) -> np.ndarray:
        return streams.uniform(purpose, step, slot, n)

    return draw


def generator_source(rng: np.random.Generator, n: int):
    """Adapter so a plain numpy Generator can feed the regime samplers."""

    def draw(slot: int) -> np.ndarray:
        return rng.random(n)

    return draw
