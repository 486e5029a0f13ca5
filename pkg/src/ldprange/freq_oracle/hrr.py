"""Hadamard Randomized Response.

A user with item x samples a coefficient index j uniformly from the padded
domain and reports the +/-1 entry H[x, j] through binary randomized response.
The aggregator averages the debiased reports per index and inverts the
transform in O(N + D log D).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from ..errors import DomainError, EmptyInputError
from .core import DomainSpec, FrequencyEstimate, PrivacySpec, is_power_of_two
from .hadamard import fast_walsh_hadamard, hadamard_entry

# Above this many (type, index) cells the grouped simulation gives way to per-user draws.
GROUPED_CELL_LIMIT = 1 << 24
_CHUNK_USERS = 1 << 21


@dataclass(frozen=True)
class HrrReport:
    index: int
    bit: int

    def __post_init__(self):
        if self.bit not in (-1, 1):
            raise DomainError(f"HRR bit must be -1 or +1, got {self.bit}")
        if self.index < 0:
            raise DomainError(f"HRR index must be non-negative, got {self.index}")


def hrr_perturb(item: int, d: DomainSpec, priv: PrivacySpec, rng: np.random.Generator,
                sign: int = 1) -> HrrReport:
    """Perturb one user. ``sign=-1`` encodes the negated one-hot vector -e_item."""
    d.check_item(item, padded=True)
    j = int(rng.integers(0, d.padded_d))
    true_bit = sign * hadamard_entry(item, j)
    bit = true_bit if rng.random() < priv.rr_keep else -true_bit
    return HrrReport(j, int(bit))


def hrr_perturb_batch(items, d: DomainSpec, priv: PrivacySpec, rng: np.random.Generator,
                      signs=None):
    """Vectorized ``hrr_perturb``; returns (indices, bits)."""
    items = np.asarray(items, dtype=np.int64).ravel()
    if items.size and (items.min() < 0 or items.max() >= d.padded_d):
        raise DomainError(f"items must lie in [0, {d.padded_d})")
    j = rng.integers(0, d.padded_d, size=items.size)
    bits = hadamard_entry(items, j)
    if signs is not None:
        bits = bits * np.asarray(signs, dtype=np.int64)
    flip = rng.random(items.size) >= priv.rr_keep
    bits = np.where(flip, -bits, bits)
    return j, bits


class HrrAccumulator:
    """Per-index report sums O_j and report counts n_j over a power-of-two domain."""

    def __init__(self, m: int):
        if not is_power_of_two(m):
            raise DomainError(f"HRR accumulator size must be a power of two, got {m}")
        self.m = m
        self.sums = np.zeros(m, dtype=np.int64)
        self.counts = np.zeros(m, dtype=np.int64)

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    def add(self, report: HrrReport) -> None:
        if report.index >= self.m:
            raise DomainError(f"report index {report.index} outside [0, {self.m})")
        self.sums[report.index] += report.bit
        self.counts[report.index] += 1

    def add_batch(self, indices, bits) -> None:
        indices = np.asarray(indices, dtype=np.int64).ravel()
        bits = np.asarray(bits, dtype=np.int64).ravel()
        if indices.size and (indices.min() < 0 or indices.max() >= self.m):
            raise DomainError(f"report indices must lie in [0, {self.m})")
        plus = np.bincount(indices[bits > 0], minlength=self.m)
        total = np.bincount(indices, minlength=self.m)
        self.sums += 2 * plus - total
        self.counts += total

    def add_sums(self, sums, counts) -> None:
        self.sums += np.asarray(sums, dtype=np.int64)
        self.counts += np.asarray(counts, dtype=np.int64)

    def merge(self, other: "HrrAccumulator") -> "HrrAccumulator":
        out = HrrAccumulator(self.m)
        out.sums = self.sums + other.sums
        out.counts = self.counts + other.counts
        return out

    def coefficients(self, priv: PrivacySpec) -> np.ndarray:
        """Unbiased +/-1-scale Hadamard coefficients of the fractional input vector."""
        if self.n == 0:
            raise EmptyInputError("HRR aggregation needs at least one report")
        return hrr_coefficients(self.sums, self.counts, priv)

    def estimate(self, priv: PrivacySpec, d: int | None = None) -> FrequencyEstimate:
        theta = fast_walsh_hadamard(self.coefficients(priv), inverse=True)
        return FrequencyEstimate(theta[: (d or self.m)], self.n)


def hrr_coefficients(sums, counts, priv: PrivacySpec) -> np.ndarray:
    """O_j / (n_j (2p - 1)); an index nobody reported on contributes 0."""
    sums = np.asarray(sums, dtype=np.float64)
    counts = np.asarray(counts, dtype=np.float64)
    scale = 2.0 * priv.rr_keep - 1.0
    out = np.zeros_like(sums)
    seen = counts > 0
    out[seen] = sums[seen] / (counts[seen] * scale)
    return out


def hrr_aggregate(reports: Iterable[HrrReport], d: DomainSpec, priv: PrivacySpec) -> FrequencyEstimate:
    acc = HrrAccumulator(d.padded_d)
    for r in reports:
        acc.add(r)
    return acc.estimate(priv, d.d)


def hrr_simulate_sums(positions, signs, counts, m: int, priv: PrivacySpec,
                      rng: np.random.Generator):
    """Draw (O_j, n_j) for a population described by user types.

    Type t is ``counts[t]`` users whose signed one-hot vector is
    ``signs[t] * e_{positions[t]}`` over a domain of size m. Two exact paths:
    when types x indices is small, each type's index assignment is one
    multinomial draw and each (type, index) cell keeps its bits with one
    binomial; otherwise users are expanded and simulated individually in
    bounded chunks.
    """
    positions = np.asarray(positions, dtype=np.int64).ravel()
    signs = np.asarray(signs, dtype=np.int64).ravel()
    counts = np.asarray(counts, dtype=np.int64).ravel()
    live = counts > 0
    positions, signs, counts = positions[live], signs[live], counts[live]
    if positions.size and (positions.min() < 0 or positions.max() >= m):
        raise DomainError(f"positions must lie in [0, {m})")
    p = priv.rr_keep
    if positions.size * m <= GROUPED_CELL_LIMIT:
        assigned = rng.multinomial(counts, np.full(m, 1.0 / m))
        kept = rng.binomial(assigned, p)
        truth = signs[:, None] * hadamard_entry(positions[:, None], np.arange(m)[None, :])
        sums = (truth * (2 * kept - assigned)).sum(axis=0)
        return sums.astype(np.int64), assigned.sum(axis=0).astype(np.int64)

    acc = HrrAccumulator(m)
    bounds = np.cumsum(counts)
    total = int(bounds[-1])
    for start in range(0, total, _CHUNK_USERS):
        users = np.arange(start, min(total, start + _CHUNK_USERS))
        t = np.searchsorted(bounds, users, side="right")
        j = rng.integers(0, m, size=users.size)
        bits = signs[t] * hadamard_entry(positions[t], j)
        flip = rng.random(users.size) >= p
        acc.add_batch(j, np.where(flip, -bits, bits))
    return acc.sums, acc.counts
