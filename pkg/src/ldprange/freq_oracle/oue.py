"""Optimized Unary Encoding.

Each user sends a D-bit vector: their own position is 1 with probability 1/2,
every other position is 1 with probability q = 1/(1+e^eps). The aggregator
corrects the per-position 1-counts S with (S/N - q)/(1/2 - q).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from ..errors import DomainError, EmptyInputError
from .core import DomainSpec, FrequencyEstimate, PrivacySpec

# Bound on the number of simulated bits held in memory at once.
_CHUNK_BITS = 1 << 22


@dataclass(frozen=True)
class OueReport:
    bits: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.bits, dtype=bool)
        if arr.ndim != 1:
            raise DomainError("an OUE report is a flat bit vector")
        object.__setattr__(self, "bits", arr)


def oue_perturb(item: int, d: DomainSpec, priv: PrivacySpec, rng: np.random.Generator) -> OueReport:
    d.check_item(item)
    u = rng.random(d.d)
    bits = u < priv.oue_q
    bits[item] = u[item] < 0.5
    return OueReport(bits)


def oue_perturb_batch(items, d: DomainSpec, priv: PrivacySpec, rng: np.random.Generator) -> np.ndarray:
    """Vectorized ``oue_perturb`` over many users; returns an (N, D) boolean matrix."""
    items = _check_items(items, d)
    u = rng.random((items.size, d.d))
    bits = u < priv.oue_q
    rows = np.arange(items.size)
    bits[rows, items] = u[rows, items] < 0.5
    return bits


def _check_items(items, d: DomainSpec) -> np.ndarray:
    items = np.asarray(items, dtype=np.int64).ravel()
    if items.size and (items.min() < 0 or items.max() >= d.d):
        raise DomainError(f"items must lie in [0, {d.d})")
    return items


class OueAccumulator:
    """Integer 1-counts per position; merging shards is exact."""

    def __init__(self, d: DomainSpec):
        self.d = d
        self.ones = np.zeros(d.d, dtype=np.int64)
        self.n = 0

    def add(self, report: OueReport) -> None:
        if report.bits.size != self.d.d:
            raise DomainError(f"report length {report.bits.size} != domain size {self.d.d}")
        self.ones += report.bits
        self.n += 1

    def add_bits(self, bits: np.ndarray) -> None:
        bits = np.asarray(bits, dtype=bool)
        if bits.ndim != 2 or bits.shape[1] != self.d.d:
            raise DomainError(f"expected an (N, {self.d.d}) bit matrix, got {bits.shape}")
        self.ones += bits.sum(axis=0, dtype=np.int64)
        self.n += bits.shape[0]

    def add_users(self, items, priv: PrivacySpec, rng: np.random.Generator) -> None:
        """Perturb and accumulate every user in ``items``, one chunk at a time."""
        items = _check_items(items, self.d)
        step = max(1, _CHUNK_BITS // self.d.d)
        for start in range(0, items.size, step):
            self.add_bits(oue_perturb_batch(items[start:start + step], self.d, priv, rng))

    def add_counts(self, ones, n: int) -> None:
        self.ones += np.asarray(ones, dtype=np.int64)
        self.n += int(n)

    def merge(self, other: "OueAccumulator") -> "OueAccumulator":
        out = OueAccumulator(self.d)
        out.ones = self.ones + other.ones
        out.n = self.n + other.n
        return out

    def estimate(self, priv: PrivacySpec) -> FrequencyEstimate:
        return oue_estimate_from_counts(self.ones, self.n, priv)


def oue_estimate_from_counts(ones, n: int, priv: PrivacySpec) -> FrequencyEstimate:
    if n <= 0:
        raise EmptyInputError("OUE aggregation needs at least one report")
    q = priv.oue_q
    theta = (np.asarray(ones, dtype=np.float64) / n - q) / (0.5 - q)
    return FrequencyEstimate(theta, int(n))


def oue_aggregate(reports: Iterable[OueReport], priv: PrivacySpec, d: DomainSpec) -> FrequencyEstimate:
    acc = OueAccumulator(d)
    for r in reports:
        acc.add(r)
    if acc.n == 0:
        raise EmptyInputError("OUE aggregation needs at least one report")
    return acc.estimate(priv)


def oue_simulate_counts(true_counts, priv: PrivacySpec, rng: np.random.Generator) -> np.ndarray:
    """Draw the aggregated 1-counts without materializing any user's bit vector.

    Position j collects Bino(c_j, 1/2) from its own users plus Bino(N - c_j, q)
    from everyone else, which is exactly the law of summing N OUE reports.
    """
    counts = np.asarray(true_counts, dtype=np.int64)
    if counts.size and counts.min() < 0:
        raise DomainError("true counts must be non-negative")
    n = int(counts.sum())
    return rng.binomial(counts, 0.5) + rng.binomial(n - counts, priv.oue_q)
