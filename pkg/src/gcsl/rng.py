"""Seeded random streams.

A run owns a single integer seed. Components never share a generator; each
draws from a stream derived from ``(seed, label, *keys)`` so that, for example,
adding evaluation points does not shift the randomness used for training.
"""
from __future__ import annotations

import zlib

import numpy as np

LABELS = ("collect", "train", "eval", "goal", "init", "demos")


def label_key(label: str) -> int:
    return zlib.crc32(label.encode("utf-8"))


def derive_rng(seed: int, label: str, *keys: int) -> np.random.Generator:
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=(label_key(label), *map(int, keys)))
    return np.random.default_rng(seq)


def episode_rngs(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Independent per-episode streams, so results do not depend on execution order."""
    root = np.random.SeedSequence(int(rng.integers(0, 2**63 - 1)))
    return [np.random.default_rng(s) for s in root.spawn(n)]
