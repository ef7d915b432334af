"""Counter-based random streams.

Every consumer gets a Philox generator keyed by (global seed, salt) with
the stream index in the counter block, so any draw is reproducible from
three integers and independent streams never overlap. The training
stream's (seed, counter) pair is the 16-byte rng state checkpoints carry.
"""
from __future__ import annotations

import numpy as np

SALT_SCENE = 1
SALT_TRAIN = 2
SALT_INIT = 3
SALT_PERCEPTUAL = 4
SALT_EVAL = 5
SALT_GENERATE = 6


def stream_rng(seed: int, salt: int, index: int) -> np.random.Generator:
    key = np.array([seed, salt], dtype=np.uint64)
    counter = np.array([0, index, 0, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


class SeededStream:
    """A resumable draw counter over a Philox stream."""

    def __init__(self, seed: int, salt: int = SALT_TRAIN, counter: int = 0):
        self.seed = int(seed)
        self.salt = salt
        self.counter = int(counter)

    def next_rng(self) -> np.random.Generator:
        rng = stream_rng(self.seed, self.salt, self.counter)
        self.counter += 1
        return rng

    def state_bytes(self) -> bytes:
        return int(self.seed).to_bytes(8, "little") + int(self.counter).to_bytes(8, "little")

    @classmethod
    def from_state_bytes(cls, raw: bytes, salt: int = SALT_TRAIN) -> "SeededStream":
        if len(raw) != 16:
            raise ValueError("rng state must be exactly 16 bytes")
        return cls(int.from_bytes(raw[:8], "little"), salt, int.from_bytes(raw[8:], "little"))
