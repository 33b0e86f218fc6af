"""Per-stage random streams derived from one top-level seed.

Each stage hashes its label together with the seed, so adding a stage never
shifts the random numbers drawn by another one.
"""
import hashlib

import numpy as np


def stage_seed(seed: int, label: str) -> int:
    digest = hashlib.sha256(f"{int(seed)}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def stage_rng(seed: int, label: str) -> np.random.Generator:
    return np.random.default_rng(stage_seed(seed, label))
