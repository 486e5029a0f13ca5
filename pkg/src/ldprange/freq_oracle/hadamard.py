"""Walsh-Hadamard matrix entries and the in-place butterfly transform."""

from __future__ import annotations

import numpy as np

from ..errors import DomainError
from .core import is_power_of_two


def hadamard_entry(i, j):
    """Unnormalized Sylvester-Hadamard entry (-1)^popcount(i & j).

    Works elementwise on integer arrays as well as on scalars.
    """
    parity = np.bitwise_count(np.bitwise_and(np.asarray(i, dtype=np.uint64),
                                             np.asarray(j, dtype=np.uint64))) & 1
    out = 1 - 2 * parity.astype(np.int64)
    return int(out) if out.ndim == 0 else out


def hadamard_matrix(d: int) -> np.ndarray:
    """Dense d x d matrix of +/-1 entries (no 1/sqrt(d) factor)."""
    if not is_power_of_two(d):
        raise DomainError(f"Hadamard size must be a power of two, got {d}")
    idx = np.arange(d, dtype=np.uint64)
    return hadamard_entry(idx[:, None], idx[None, :])


def fast_walsh_hadamard(vec, inverse: bool = False) -> np.ndarray:
    """O(D log D) product with the unnormalized Hadamard matrix.

    The forward transform multiplies by the +/-1 matrix; ``inverse=True``
    additionally divides by D, so ``fast_walsh_hadamard(fast_walsh_hadamard(x), True) == x``.
    """
    x = np.array(vec, dtype=np.float64)
    if x.ndim != 1 or not is_power_of_two(x.size):
        raise DomainError(f"transform length must be a power of two, got shape {x.shape}")
    d = x.size
    h = 1
    while h < d:
        blocks = x.reshape(-1, 2, h)
        a = blocks[:, 0, :].copy()
        blocks[:, 0, :] += blocks[:, 1, :]
        blocks[:, 1, :] = a - blocks[:, 1, :]
        h *= 2
    if inverse:
        x /= d
    return x
