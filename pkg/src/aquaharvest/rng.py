"""Deterministic per-path random substreams.

Every simulated path draws from its own generator, keyed by
``(seed, stream, component, path_index)``. Results for path ``i`` therefore
do not depend on how many paths are simulated or how they are chunked.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

# world streams
TRAIN = 0
EVAL = 1
MEAN = 2
CALIBRATE = 3
SYNTHETIC = 4

# model components
SALMON = 0
SOY = 1
BIOLOGY = 2


@dataclass(frozen=True)
class Substreams:
    """A family of per-path generators for one (seed, stream, component)."""

    seed: int
    stream: int = TRAIN
    component: int = 0
    offset: int = 0

    def generator(self, path: int) -> np.random.Generator:
        key = (self.stream, self.component, self.offset + path)
        return np.random.Generator(np.random.Philox(np.random.SeedSequence(self.seed, spawn_key=key)))

    def for_component(self, component: int) -> "Substreams":
        return replace(self, component=component)

    def shifted(self, offset: int) -> "Substreams":
        """Substreams for a chunk of paths starting at global index ``offset``."""
        return replace(self, offset=self.offset + offset)
