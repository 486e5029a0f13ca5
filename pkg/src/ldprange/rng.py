"""Deterministic derivation of independent random streams from a master seed."""

from __future__ import annotations

import zlib

import numpy as np


def _word(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode())
    return int(part)


def stream(master_seed: int, *path) -> np.random.Generator:
    """Generator keyed by (master seed, path); equal keys give bit-identical streams."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), *map(_word, path)]))


def user_rng(master_seed: int, user_index: int) -> np.random.Generator:
    """Stream owned by one user, so per-user perturbation is reproducible and order-independent."""
    return stream(master_seed, "user", user_index)
