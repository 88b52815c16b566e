"""Seeded random streams split by purpose.

Each purpose (masking, dropout, reparameterization, init, ...) draws from
its own PCG64 generator derived from ``SeedSequence(seed, spawn_key=(k,))``
so adding draws for one consumer never shifts another consumer's stream.
PCG64 with numpy's ``Generator`` is reproducible across platforms.
"""

from __future__ import annotations

import numpy as np

ALGORITHM = "PCG64"

PURPOSES = ("init", "masking", "dropout", "reparameterize", "shuffle", "finetune", "synthetic", "oracle")


class Rng:
    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._streams: dict[str, np.random.Generator] = {}

    def stream(self, purpose: str) -> np.random.Generator:
        if purpose not in PURPOSES:
            raise KeyError(f"unknown rng purpose {purpose!r}; expected one of {PURPOSES}")
        gen = self._streams.get(purpose)
        if gen is None:
            seq = np.random.SeedSequence(self.seed, spawn_key=(PURPOSES.index(purpose),))
            gen = np.random.Generator(np.random.PCG64(seq))
            self._streams[purpose] = gen
        return gen

    def state(self) -> dict:
        """JSON-serializable snapshot of every stream touched so far."""
        return {
            "seed": self.seed,
            "algorithm": ALGORITHM,
            "streams": {k: self._streams[k].bit_generator.state for k in sorted(self._streams)},
        }

    @classmethod
    def from_state(cls, state: dict) -> "Rng":
        rng = cls(state["seed"])
        for purpose, st in state["streams"].items():
            rng.stream(purpose).bit_generator.state = st
        return rng

    def __repr__(self):
        return f"Rng(seed={self.seed}, algorithm={ALGORITHM})"
