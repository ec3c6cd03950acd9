"""Keyed random substreams.

Every unit of stochastic work (a pilot, a bootstrap slot, a Monte Carlo power
replicate) owns a generator derived from ``(master seed, *key)`` through
:class:`numpy.random.SeedSequence`. Results therefore do not depend on the
order in which work is scheduled or on the number of workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# stage tags
PILOT = 1
BOOTSTRAP = 2
UCB = 3
POWER = 4
SIMULATE = 5


@dataclass(frozen=True)
class StreamKey:
    """A master seed plus a path of non-negative integers."""

    seed: int
    path: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.seed < 0 or self.seed >= 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if any(k < 0 for k in self.path):
            raise ValueError("stream path entries must be non-negative")

    def child(self, *index: int) -> StreamKey:
        return StreamKey(self.seed, self.path + tuple(int(i) for i in index))

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.seed, spawn_key=self.path)
        return np.random.Generator(np.random.PCG64(seq))
