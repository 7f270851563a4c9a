"""Named, splittable random streams.

Each concern (assignment, outcomes, per-agent policies, the boss) draws from
its own PCG64 stream spawned from the run seed, so traffic in one concern
never shifts the draws of another.
"""

from __future__ import annotations

import zlib

import numpy as np

ASSIGNMENT = "assignment"
OUTCOME = "outcome"
POLICY = "policy"
BOSS = "boss"


def _concern_key(concern: str) -> int:
    return zlib.crc32(concern.encode("utf-8"))


def seed_sequence(seed: int, concern: str, *keys: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(_concern_key(concern), *keys))


def stream(seed: int, concern: str, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, concern, *keys)))


def derive_seed(seed: int, concern: str, *keys: int) -> int:
    """A 64-bit seed for a sub-component, stable across platforms."""
    return int(seed_sequence(seed, concern, *keys).generate_state(1, np.uint64)[0])
