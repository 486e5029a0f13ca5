"""Optimal Local Hashing.

A user draws a hash key, hashes their item into [g) and applies g-ary
randomized response to the hash value. The aggregator re-hashes every domain
item under every report's key, so decoding costs O(N * D).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from ..errors import DomainError, EmptyInputError
from .core import DomainSpec, FrequencyEstimate, PrivacySpec

_CHUNK_CELLS = 1 << 22
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
# The hash emits 32 bits, so larger ranges cannot be told apart.
MAX_HASH_SIZE = 1 << 32


def olh_hash_size(priv: PrivacySpec) -> int:
    return int(min(MAX_HASH_SIZE, max(2, round(priv.e_eps + 1.0))))


def olh_keep_prob(priv: PrivacySpec, g: int) -> float:
    return priv.e_eps / (priv.e_eps + g - 1.0)


def _splitmix64(z: np.ndarray) -> np.ndarray:
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def olh_hash(keys, items, g: int) -> np.ndarray:
    """Keyed multiply-add-shift hash of ``items`` into [0, g); broadcasts keys against items.

    The key expands to a multiplier a and offset b; ((a*x + b) mod 2^64) >> 32
    is a universal family on 32-bit inputs, and the top-bits multiply maps it
    onto [0, g).
    """
    keys = np.atleast_1d(np.asarray(keys, dtype=np.uint64))
    x = np.atleast_1d(np.asarray(items, dtype=np.uint64))
    a = _splitmix64(keys)
    b = _splitmix64(keys ^ np.uint64(0xD6E8FEB86659FD93))
    h32 = (a * x + b) >> np.uint64(32)
    return ((h32 * np.uint64(g)) >> np.uint64(32)).astype(np.int64)


@dataclass(frozen=True)
class OlhReport:
    hash_key: int
    value: int


def _grr(true_values: np.ndarray, g: int, p: float, rng: np.random.Generator) -> np.ndarray:
    keep = rng.random(true_values.size) < p
    other = rng.integers(0, g - 1, size=true_values.size)
    other += other >= true_values
    return np.where(keep, true_values, other)


def olh_perturb(item: int, d: DomainSpec, priv: PrivacySpec, rng: np.random.Generator) -> OlhReport:
    d.check_item(item)
    g = olh_hash_size(priv)
    key = int(rng.integers(0, 2**64, dtype=np.uint64))
    hashed = olh_hash(key, item, g)
    value = _grr(hashed, g, olh_keep_prob(priv, g), rng)
    return OlhReport(key, int(value[0]))


def olh_perturb_batch(items, d: DomainSpec, priv: PrivacySpec, rng: np.random.Generator):
    """Vectorized ``olh_perturb``; returns (keys, values) arrays."""
    items = np.asarray(items, dtype=np.int64).ravel()
    if items.size and (items.min() < 0 or items.max() >= d.d):
        raise DomainError(f"items must lie in [0, {d.d})")
    g = olh_hash_size(priv)
    keys = rng.integers(0, 2**64, size=items.size, dtype=np.uint64)
    hashed = olh_hash(keys, items, g)
    return keys, _grr(hashed, g, olh_keep_prob(priv, g), rng)


class OlhAccumulator:
    """Support counts T[j] = number of reports whose (key, value) is consistent with item j."""

    def __init__(self, d: DomainSpec, g: int):
        if g < 2:
            raise DomainError("hash range g must be at least 2")
        self.d = d
        self.g = g
        self.support = np.zeros(d.d, dtype=np.int64)
        self.n = 0

    def add(self, report: OlhReport) -> None:
        if not 0 <= report.value < self.g:
            raise DomainError(f"report value {report.value} outside [0, {self.g})")
        self.support += olh_hash(report.hash_key, np.arange(self.d.d), self.g) == report.value
        self.n += 1

    def add_batch(self, keys, values) -> None:
        keys = np.asarray(keys, dtype=np.uint64).ravel()
        values = np.asarray(values, dtype=np.int64).ravel()
        domain = np.arange(self.d.d, dtype=np.uint64)
        step = max(1, _CHUNK_CELLS // self.d.d)
        for start in range(0, keys.size, step):
            k = keys[start:start + step]
            hv = olh_hash(k[:, None], domain[None, :], self.g)
            self.support += (hv == values[start:start + step, None]).sum(axis=0)
        self.n += keys.size

    def merge(self, other: "OlhAccumulator") -> "OlhAccumulator":
        out = OlhAccumulator(self.d, self.g)
        out.support = self.support + other.support
        out.n = self.n + other.n
        return out

    def estimate(self, priv: PrivacySpec) -> FrequencyEstimate:
        if self.n == 0:
            raise EmptyInputError("OLH aggregation needs at least one report")
        p = olh_keep_prob(priv, self.g)
        theta = (self.support / self.n - 1.0 / self.g) / (p - 1.0 / self.g)
        return FrequencyEstimate(theta, self.n)


def olh_aggregate(reports: Iterable[OlhReport], d: DomainSpec, priv: PrivacySpec) -> FrequencyEstimate:
    acc = OlhAccumulator(d, olh_hash_size(priv))
    for r in reports:
        acc.add(r)
    return acc.estimate(priv)
