"""Counter-based deterministic random streams.

Each draw derives a fresh Philox generator keyed by (seed, stream_id) whose
block counter is the number of calls made so far. Draws are therefore a pure
function of (seed, stream_id, counter): state is three integers, resume is
exact, and distinct stream ids give statistically independent sequences.
"""

from __future__ import annotations

import numpy as np

_U64 = 2**64


class RngStream:
    __slots__ = ("seed", "stream_id", "counter")

    def __init__(self, seed: int, stream_id: int = 0, counter: int = 0):
        self.seed = int(seed) % _U64
        self.stream_id = int(stream_id) % _U64
        self.counter = int(counter)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, counter={self.counter})"

    def _generator(self) -> np.random.Generator:
        # the call index lives in the second counter word, leaving 2**64
        # blocks of Philox output per call before streams could overlap
        bg = np.random.Philox(
            counter=[0, self.counter % _U64, 0, 0],
            key=[self.seed, self.stream_id],
        )
        self.counter += 1
        return np.random.Generator(bg)

    def normal(self, shape=()) -> np.ndarray:
        return self._generator().standard_normal(shape)

    def uniform(self, shape=()) -> np.ndarray:
        return self._generator().random(shape)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        """Uniform integers in [low, high)."""
        return self._generator().integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._generator().permutation(n)

    def state(self) -> dict:
        return {"seed": self.seed, "stream_id": self.stream_id, "counter": self.counter}

    @classmethod
    def from_state(cls, state: dict) -> "RngStream":
        return cls(state["seed"], state["stream_id"], state["counter"])


def seeded_rng(seed: int, stream_id: int = 0) -> RngStream:
    """A deterministic stream; same (seed, stream_id) always replays."""
    return RngStream(seed, stream_id)
