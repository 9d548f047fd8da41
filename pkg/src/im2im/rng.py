"""Seeded random streams shared by data shuffling, augmentation, init and dropout."""

from __future__ import annotations

import numpy as np

ALGORITHM = "pcg64"

_MASK64 = (1 << 64) - 1


class RngStream:
    """Deterministic PCG64 stream with a draw counter and snapshot support.

    The same seed and the same sequence of draw calls produce identical
    values on every platform numpy supports. Every drawing method counts as
    one draw event; the counter is monotone and survives snapshot/restore.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self.algorithm = ALGORITHM
        self.draws = 0
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def normal(self, shape=(), std: float = 1.0, dtype=np.float64) -> np.ndarray:
        self.draws += 1
        out = self._gen.standard_normal(shape) * std
        return np.asarray(out).astype(dtype, copy=False)

    def random(self, shape=()) -> np.ndarray:
        """Uniform draws in [0, 1)."""
        self.draws += 1
        return np.asarray(self._gen.random(shape))

    def randint_inclusive(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi], both endpoints included."""
        self.draws += 1
        return int(self._gen.integers(lo, hi + 1))

    def permutation(self, n: int) -> np.ndarray:
        self.draws += 1
        return self._gen.permutation(n)

    # -- state management ---------------------------------------------------

    def get_state(self) -> dict:
        return {
            "seed": self.seed,
            "algorithm": self.algorithm,
            "draws": self.draws,
            "generator": self._gen.bit_generator.state,
        }

    def set_state(self, state: dict) -> None:
        if state.get("algorithm") != ALGORITHM:
            raise ValueError(f"unknown rng algorithm: {state.get('algorithm')!r}")
        self.seed = int(state["seed"])
        self.draws = int(state["draws"])
        self._gen.bit_generator.state = state["generator"]

    @classmethod
    def from_state(cls, state: dict) -> "RngStream":
        stream = cls(0)
        stream.set_state(state)
        return stream

    def clone(self) -> "RngStream":
        return RngStream.from_state(self.get_state())
