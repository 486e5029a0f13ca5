"""Haar-wavelet range estimation with level-sampled Hadamard randomized response.

Coefficients are orthonormal and ordered [c0, coarsest level, ..., finest
level]; level l (1 = finest) holds d / 2^l detail coefficients starting at
offset d / 2^l. An item contributes to exactly one coefficient per level, at
position item >> l, with sign + when bit l-1 of the item is 0. Each user
samples a level and reports that level's signed one-hot vector through HRR.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import DomainError, EmptyInputError, MissingLevelError
from .freq_oracle import (
    DomainSpec,
    HrrAccumulator,
    PrivacySpec,
    fast_walsh_hadamard,
    hadamard_matrix,
    hrr_coefficients,
    hrr_perturb,
    hrr_perturb_batch,
    hrr_simulate_sums,
    is_power_of_two,
    next_power_of_two,
    variance_formula,
)
from .freq_oracle.hrr import HrrReport


def _check_length(n: int) -> int:
    if n < 1 or not is_power_of_two(n):
        raise DomainError(f"Haar transform needs a power-of-two length, got {n}")
    return n.bit_length() - 1


@dataclass(frozen=True)
class HaarLayout:
    """Haar decomposition of a domain of ``domain`` items padded to ``d = 2^h``."""

    domain: int

    def __post_init__(self):
        if self.domain < 2:
            raise DomainError(f"Haar layout needs at least two items, got {self.domain}")

    @property
    def d(self) -> int:
        return next_power_of_two(self.domain)

    @property
    def h(self) -> int:
        return self.d.bit_length() - 1

    def level_size(self, level: int) -> int:
        return self.d >> level

    def offset(self, level: int) -> int:
        return self.d >> level

    def position(self, item, level: int):
        return item >> level

    def sign(self, item, level: int):
        return 1 - 2 * ((item >> (level - 1)) & 1)


def haar_matrix(d: int) -> np.ndarray:
    """Rows are items, columns the orthonormal basis vectors in coefficient order."""
    h = _check_length(d)
    M = np.zeros((d, d))
    M[:, 0] = 1.0 / math.sqrt(d)
    items = np.arange(d)
    for level in range(1, h + 1):
        col = (d >> level) + (items >> level)
        M[items, col] = (1 - 2 * ((items >> (level - 1)) & 1)) * 2.0 ** (-level / 2)
    return M


def haar_transform(vec) -> np.ndarray:
    """Orthonormal Haar coefficients by repeated pairwise differencing of block sums."""
    x = np.asarray(vec, dtype=np.float64)
    d = x.size
    h = _check_length(d)
    out = np.empty(d)
    sums = x.copy()
    for level in range(1, h + 1):
        pairs = sums.reshape(-1, 2)
        out[d >> level: d >> (level - 1)] = (pairs[:, 0] - pairs[:, 1]) * 2.0 ** (-level / 2)
        sums = pairs.sum(axis=1)
    out[0] = sums[0] / math.sqrt(d)
    return out


def inverse_haar(coefficients) -> np.ndarray:
    """Leaf values from orthonormal coefficients by splitting block sums top-down."""
    c = np.asarray(coefficients, dtype=np.float64)
    d = c.size
    h = _check_length(d)
    sums = np.array([c[0] * math.sqrt(d)])
    for level in range(h, 0, -1):
        diff = c[d >> level: d >> (level - 1)] * 2.0 ** (level / 2)
        sums = np.stack([(sums + diff) / 2, (sums - diff) / 2], axis=1).ravel()
    return sums


@dataclass(frozen=True)
class HaarReport:
    level: int
    inner: HrrReport


@dataclass(frozen=True)
class HaarEstimates:
    """``levels[0]`` holds c0; ``levels[l]`` the orthonormal level-l coefficient estimates."""

    layout: HaarLayout
    levels: tuple
    counts: tuple

    def __post_init__(self):
        if len(self.levels) != self.layout.h + 1:
            raise DomainError("need c0 plus one coefficient vector per level")
        frozen = []
        for level, vec in enumerate(self.levels):
            arr = np.array(vec, dtype=np.float64)
            want = 1 if level == 0 else self.layout.level_size(level)
            if arr.shape != (want,):
                raise DomainError(f"level {level} has shape {arr.shape}, expected ({want},)")
            arr.setflags(write=False)
            frozen.append(arr)
        object.__setattr__(self, "levels", tuple(frozen))
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))

    @property
    def c0(self) -> float:
        return float(self.levels[0][0])

    def coefficients(self) -> np.ndarray:
        return np.concatenate([self.levels[0]] + [self.levels[l] for l in range(self.layout.h, 0, -1)])

    def leaves(self) -> np.ndarray:
        return inverse_haar(self.coefficients())

    @classmethod
    def from_coefficients(cls, layout: HaarLayout, coefficients, counts=None) -> "HaarEstimates":
        c = np.asarray(coefficients, dtype=np.float64)
        if c.size != layout.d:
            raise DomainError(f"expected {layout.d} coefficients, got {c.size}")
        levels = [c[:1]] + [c[layout.offset(l): 2 * layout.offset(l)] for l in range(1, layout.h + 1)]
        return cls(layout, tuple(levels), counts if counts is not None else (0,) * (layout.h + 1))


def haar_encode_user(item: int, layout: HaarLayout, priv: PrivacySpec,
                     rng: np.random.Generator) -> HaarReport:
    if not 0 <= item < layout.d:
        raise DomainError(f"item {item} outside [0, {layout.d})")
    level = int(rng.integers(1, layout.h + 1))
    inner = hrr_perturb(layout.position(item, level), DomainSpec(layout.level_size(level)), priv,
                        rng, sign=int(layout.sign(item, level)))
    return HaarReport(level, inner)


class HaarAccumulator:
    """Per-level HRR sums; merge is elementwise addition."""

    def __init__(self, layout: HaarLayout, priv: PrivacySpec):
        self.layout = layout
        self.priv = priv
        self.levels = {l: HrrAccumulator(layout.level_size(l)) for l in range(1, layout.h + 1)}

    def add(self, report: HaarReport) -> None:
        if report.level not in self.levels:
            raise DomainError(f"report level {report.level} outside [1, {self.layout.h}]")
        self.levels[report.level].add(report.inner)

    def add_users(self, items, rng: np.random.Generator) -> None:
        items = np.asarray(items, dtype=np.int64).ravel()
        if items.size and (items.min() < 0 or items.max() >= self.layout.d):
            raise DomainError(f"items must lie in [0, {self.layout.d})")
        sampled = rng.integers(1, self.layout.h + 1, size=items.size)
        for level, acc in self.levels.items():
            mine = items[sampled == level]
            acc.add_batch(*hrr_perturb_batch(self.layout.position(mine, level),
                                             DomainSpec(self.layout.level_size(level)), self.priv,
                                             rng, signs=self.layout.sign(mine, level)))

    def merge(self, other: "HaarAccumulator") -> "HaarAccumulator":
        out = HaarAccumulator(self.layout, self.priv)
        out.levels = {l: self.levels[l].merge(other.levels[l]) for l in self.levels}
        return out

    def finalize(self) -> HaarEstimates:
        return _finalize(self.layout, self.priv,
                         [(self.levels[l].sums, self.levels[l].counts) for l in range(1, self.layout.h + 1)])


def _finalize(layout: HaarLayout, priv: PrivacySpec, per_level) -> HaarEstimates:
    levels = [np.array([1.0 / math.sqrt(layout.d)])]
    counts = [0]
    for level, (sums, cnt) in enumerate(per_level, start=1):
        n_l = int(np.sum(cnt))
        if n_l == 0:
            raise MissingLevelError(level)
        signed = fast_walsh_hadamard(hrr_coefficients(sums, cnt, priv), inverse=True)
        levels.append(signed * 2.0 ** (-level / 2))
        counts.append(n_l)
    return HaarEstimates(layout, tuple(levels), tuple(counts))


def haar_aggregate(reports: Iterable[HaarReport], layout: HaarLayout, priv: PrivacySpec) -> HaarEstimates:
    reports = list(reports)
    if not reports:
        raise EmptyInputError("Haar aggregation needs at least one report")
    acc = HaarAccumulator(layout, priv)
    for r in reports:
        acc.add(r)
    return acc.finalize()


def simulate_haar(true_counts, layout: HaarLayout, priv: PrivacySpec,
                  rng: np.random.Generator) -> HaarEstimates:
    """Population-level simulation, equal in distribution to aggregating every user's report.

    Users who sampled the same level and share (position, sign) are one type;
    ``hrr_simulate_sums`` draws the per-index sums for all types at once.
    """
    counts = np.asarray(true_counts, dtype=np.int64).ravel()
    if counts.size > layout.d:
        raise DomainError(f"{counts.size} counts do not fit in a domain of {layout.d}")
    if counts.size and counts.min() < 0:
        raise DomainError("true counts must be non-negative")
    padded = np.zeros(layout.d, dtype=np.int64)
    padded[: counts.size] = counts
    split = rng.multinomial(padded, np.full(layout.h, 1.0 / layout.h)).T
    per_level = []
    for level in range(1, layout.h + 1):
        m = layout.level_size(level)
        halves = split[level - 1].reshape(m, 2, -1).sum(axis=2)
        positions = np.concatenate([np.arange(m), np.arange(m)])
        signs = np.concatenate([np.ones(m, dtype=np.int64), -np.ones(m, dtype=np.int64)])
        per_level.append(hrr_simulate_sums(positions, signs, halves.T.ravel(), m, priv, rng))
    return _finalize(layout, priv, per_level)


def haar_range_weights(a: int, b: int, layout: HaarLayout) -> list[tuple[int, int, float]]:
    """(level, position, weight) triples such that the range answer is
    r / d + sum of weight * s_hat, where s_hat = 2^(l/2) c_hat is the +/-1-scale coefficient.

    Only blocks cut by the range boundary contribute, at most two per level.
    """
    if a > b or a < 0 or b >= layout.domain:
        raise DomainError(f"invalid range [{a}, {b}] for domain [0, {layout.domain})")
    out = []
    for level in range(1, layout.h + 1):
        half = 1 << (level - 1)
        for k in sorted({a >> level, b >> level}):
            lo = k << level
            left = max(0, min(b, lo + half - 1) - max(a, lo) + 1)
            right = max(0, min(b, lo + 2 * half - 1) - max(a, lo + half) + 1)
            if left != right:
                out.append((level, k, (left - right) / float(1 << level)))
    return out


def haar_answer_range(est: HaarEstimates, a: int, b: int) -> float:
    layout = est.layout
    total = (b - a + 1) * est.c0 / math.sqrt(layout.d)
    for level, k, w in haar_range_weights(a, b, layout):
        total += w * est.levels[level][k] * 2.0 ** (level / 2)
    return float(total)


def haar_variance_bound(d: int, priv: PrivacySpec, n: int) -> float:
    """log2(D)^2 V_F / 2, independent of the range length."""
    return 0.5 * math.log2(d) ** 2 * variance_formula("hrr", priv, n)


def haar_channel_matrix(d: int, priv: PrivacySpec) -> np.ndarray:
    """Exact channel: outputs enumerate (level, index, bit) with bit +1 before -1 per level."""
    layout = HaarLayout(d)
    if layout.d != d:
        raise DomainError(f"Haar channel enumeration needs a power-of-two domain, got {d}")
    p = priv.rr_keep
    items = np.arange(d)
    blocks = []
    for level in range(1, layout.h + 1):
        m = layout.level_size(level)
        truth = layout.sign(items, level)[:, None] * hadamard_matrix(m)[layout.position(items, level)]
        plus = np.where(truth > 0, p, 1 - p) / m
        minus = np.where(truth < 0, p, 1 - p) / m
        blocks.append(np.concatenate([plus, minus], axis=1) / layout.h)
    return np.concatenate(blocks, axis=1)
