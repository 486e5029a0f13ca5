"""Hierarchical histograms over a full B-ary tree.

Each user samples one level l in [1, h] uniformly, takes the one-hot vector of
their ancestor at that level and perturbs it with a frequency oracle. The
aggregator estimates per-level node fractions from the users who reported on
that level; a range is answered by summing the nodes of its B-adic cover.
The root (level 0) is never sampled: its value is the total fraction, 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, NamedTuple

import numpy as np
from scipy.optimize import brentq

from .errors import CapacityError, DomainError, EmptyInputError, MissingLevelError
from .freq_oracle import (
    DomainSpec,
    HrrAccumulator,
    OlhAccumulator,
    OueAccumulator,
    PrivacySpec,
    fast_walsh_hadamard,
    hrr_coefficients,
    hrr_perturb,
    hrr_perturb_batch,
    hrr_simulate_sums,
    next_power_of_two,
    olh_hash_size,
    olh_perturb,
    olh_perturb_batch,
    oue_estimate_from_counts,
    oue_perturb,
    oue_simulate_counts,
    variance_formula,
)
from .freq_oracle.hrr import HrrReport
from .freq_oracle.olh import OlhReport
from .freq_oracle.oue import OueReport

ORACLES = ("oue", "olh", "hrr")


def int_log_ceil(base: int, x: int) -> int:
    """Smallest k >= 0 with base**k >= x, computed without floating point."""
    k, power = 0, 1
    while power < x:
        power *= base
        k += 1
    return k


@dataclass(frozen=True)
class TreeLayout:
    """Full B-ary tree with ``b**h`` leaves covering a domain of ``domain`` items."""

    b: int
    h: int
    domain: int

    def __post_init__(self):
        if self.b < 2:
            raise DomainError(f"branching factor must be at least 2, got {self.b}")
        if self.h < 1:
            raise DomainError(f"tree height must be at least 1, got {self.h}")
        if not 1 <= self.domain <= self.b ** self.h:
            raise DomainError(f"domain {self.domain} does not fit in {self.b}^{self.h} leaves")

    @classmethod
    def for_domain(cls, d: int, b: int) -> "TreeLayout":
        return cls(b, max(1, int_log_ceil(b, d)), d)

    @property
    def d(self) -> int:
        return self.b ** self.h

    def level_size(self, level: int) -> int:
        return self.b ** level

    def block(self, level: int) -> int:
        """Leaves under one node of ``level``."""
        return self.b ** (self.h - level)

    def ancestor(self, item, level: int):
        return item // self.block(level)

    @cached_property
    def offsets(self) -> tuple[int, ...]:
        out, acc = [], 0
        for level in range(self.h + 1):
            out.append(acc)
            acc += self.b ** level
        return tuple(out + [acc])

    @property
    def n_nodes(self) -> int:
        return self.offsets[-1]


class CoverNode(NamedTuple):
    level: int
    index: int
    lo: int
    hi: int


def b_adic_decompose(a: int, b: int, layout: TreeLayout) -> list[CoverNode]:
    """Greedy cover of [a, b] by maximal aligned B-adic blocks, scanning left to right.

    Blocks never exceed one level-1 node, so the root is not used even for
    the full domain.
    """
    if a > b:
        raise DomainError(f"empty range [{a}, {b}]")
    if a < 0 or b >= layout.d:
        raise DomainError(f"range [{a}, {b}] outside [0, {layout.d})")
    B = layout.b
    out = []
    pos = a
    while pos <= b:
        j, size = 0, 1
        while j + 1 < layout.h and pos % (size * B) == 0 and pos + size * B - 1 <= b:
            j += 1
            size *= B
        out.append(CoverNode(layout.h - j, pos // size, pos, pos + size - 1))
        pos += size
    return out


def hh_range_sums(levels, layout: TreeLayout, a, b) -> np.ndarray:
    """Vectorized cover sums of per-level node values over ranges [a[i], b[i]].

    At level l the greedy cover holds exactly the nodes inside the range whose
    parent is not inside it (level 1 has no usable parent), so each level
    contributes one cumulative-sum difference minus the children of inside parents.
    """
    a = np.asarray(a, dtype=np.int64)
    n = np.asarray(b, dtype=np.int64) + 1
    if np.any(a < 0) or np.any(n > layout.d) or np.any(n <= a):
        raise DomainError(f"ranges must satisfy 0 <= a <= b < {layout.d}")
    B = layout.b
    out = np.zeros(np.broadcast(a, n).shape)
    for level in range(1, layout.h + 1):
        s = layout.block(level)
        cum = np.concatenate([[0.0], np.cumsum(levels[level])])
        lo, hi = -(-a // s), n // s
        part = np.where(hi > lo, cum[np.maximum(hi, lo)] - cum[lo], 0.0)
        if level > 1:
            plo, phi = -(-a // (s * B)) * B, (n // (s * B)) * B
            part -= np.where(phi > plo, cum[np.maximum(phi, plo)] - cum[plo], 0.0)
        out += part
    return out


@dataclass(frozen=True)
class LevelReport:
    level: int
    inner: object


@dataclass(frozen=True)
class NodeEstimates:
    """Per-level node fractions; ``levels[0]`` is the root, ``counts[l]`` is N_l."""

    layout: TreeLayout
    levels: tuple
    counts: tuple
    consistent: bool = False

    def __post_init__(self):
        if len(self.levels) != self.layout.h + 1:
            raise DomainError("need one estimate vector per level including the root")
        frozen = []
        for level, vec in enumerate(self.levels):
            arr = np.array(vec, dtype=np.float64)
            if arr.shape != (self.layout.level_size(level),):
                raise DomainError(f"level {level} has shape {arr.shape}, "
                                  f"expected ({self.layout.level_size(level)},)")
            arr.setflags(write=False)
            frozen.append(arr)
        object.__setattr__(self, "levels", tuple(frozen))
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))

    @property
    def leaves(self) -> np.ndarray:
        return self.levels[-1]

    @property
    def n_reports(self) -> int:
        return sum(self.counts)

    def flat(self) -> np.ndarray:
        return np.concatenate(self.levels)

    def replace_values(self, levels, consistent: bool) -> "NodeEstimates":
        return NodeEstimates(self.layout, tuple(levels), self.counts, consistent)

    @classmethod
    def from_flat(cls, layout: TreeLayout, values, counts, consistent: bool = False) -> "NodeEstimates":
        values = np.asarray(values, dtype=np.float64)
        off = layout.offsets
        levels = tuple(values[off[l]:off[l + 1]] for l in range(layout.h + 1))
        return cls(layout, levels, counts, consistent)


def hh_encode_user(item: int, layout: TreeLayout, priv: PrivacySpec, oracle: str,
                   rng: np.random.Generator) -> LevelReport:
    if not 0 <= item < layout.d:
        raise DomainError(f"item {item} outside [0, {layout.d})")
    level = int(rng.integers(1, layout.h + 1))
    node = layout.ancestor(int(item), level)
    dom = DomainSpec(layout.level_size(level))
    if oracle == "oue":
        inner = oue_perturb(node, dom, priv, rng)
    elif oracle == "olh":
        inner = olh_perturb(node, dom, priv, rng)
    elif oracle == "hrr":
        inner = hrr_perturb(node, dom, priv, rng)
    else:
        raise DomainError(f"unknown oracle {oracle!r}; expected one of {ORACLES}")
    return LevelReport(level, inner)


def _level_accumulator(oracle: str, size: int, priv: PrivacySpec):
    if oracle == "oue":
        return OueAccumulator(DomainSpec(size))
    if oracle == "olh":
        return OlhAccumulator(DomainSpec(size), olh_hash_size(priv))
    if oracle == "hrr":
        return HrrAccumulator(next_power_of_two(size))
    raise DomainError(f"unknown oracle {oracle!r}; expected one of {ORACLES}")


def _oracle_of(report) -> str:
    if isinstance(report, OueReport):
        return "oue"
    if isinstance(report, OlhReport):
        return "olh"
    if isinstance(report, HrrReport):
        return "hrr"
    raise DomainError(f"unrecognised inner report {type(report).__name__}")


class HierarchyAccumulator:
    """One oracle accumulator per sampled level; shards merge level by level."""

    def __init__(self, layout: TreeLayout, oracle: str, priv: PrivacySpec):
        self.layout = layout
        self.oracle = oracle
        self.priv = priv
        self.levels = {l: _level_accumulator(oracle, layout.level_size(l), priv)
                       for l in range(1, layout.h + 1)}

    def add(self, report: LevelReport) -> None:
        if report.level not in self.levels:
            raise DomainError(f"report level {report.level} outside [1, {self.layout.h}]")
        if _oracle_of(report.inner) != self.oracle:
            raise DomainError(f"expected {self.oracle} reports, got {_oracle_of(report.inner)}")
        self.levels[report.level].add(report.inner)

    def add_users(self, items, rng: np.random.Generator) -> None:
        """Simulate every user in ``items`` individually (vectorized) and accumulate."""
        items = np.asarray(items, dtype=np.int64).ravel()
        if items.size and (items.min() < 0 or items.max() >= self.layout.d):
            raise DomainError(f"items must lie in [0, {self.layout.d})")
        sampled = rng.integers(1, self.layout.h + 1, size=items.size)
        for level, acc in self.levels.items():
            nodes = self.layout.ancestor(items[sampled == level], level)
            dom = DomainSpec(self.layout.level_size(level))
            if self.oracle == "oue":
                acc.add_users(nodes, self.priv, rng)
            elif self.oracle == "olh":
                acc.add_batch(*olh_perturb_batch(nodes, dom, self.priv, rng))
            else:
                acc.add_batch(*hrr_perturb_batch(nodes, dom, self.priv, rng))

    def merge(self, other: "HierarchyAccumulator") -> "HierarchyAccumulator":
        out = HierarchyAccumulator(self.layout, self.oracle, self.priv)
        out.levels = {l: self.levels[l].merge(other.levels[l]) for l in self.levels}
        return out

    def finalize(self) -> NodeEstimates:
        levels = [np.ones(1)]
        counts = [0]
        for level in range(1, self.layout.h + 1):
            acc = self.levels[level]
            if acc.n == 0:
                raise MissingLevelError(level)
            size = self.layout.level_size(level)
            if self.oracle == "hrr":
                theta = acc.estimate(self.priv, size).theta_hat
            else:
                theta = acc.estimate(self.priv).theta_hat
            levels.append(theta)
            counts.append(acc.n)
        return NodeEstimates(self.layout, tuple(levels), tuple(counts))


def hh_aggregate(reports: Iterable[LevelReport], layout: TreeLayout, priv: PrivacySpec) -> NodeEstimates:
    reports = list(reports)
    if not reports:
        raise EmptyInputError("hierarchy aggregation needs at least one report")
    acc = HierarchyAccumulator(layout, _oracle_of(reports[0].inner), priv)
    for r in reports:
        acc.add(r)
    return acc.finalize()


def split_levels(true_counts, layout: TreeLayout, rng: np.random.Generator) -> np.ndarray:
    """(h, leaves) counts of users per (sampled level, item); every user picks a level uniformly."""
    counts = _padded_counts(true_counts, layout)
    return rng.multinomial(counts, np.full(layout.h, 1.0 / layout.h)).T


def _padded_counts(true_counts, layout: TreeLayout) -> np.ndarray:
    counts = np.asarray(true_counts, dtype=np.int64).ravel()
    if counts.size > layout.d:
        raise DomainError(f"{counts.size} counts do not fit in {layout.d} leaves")
    if counts.size and counts.min() < 0:
        raise DomainError("true counts must be non-negative")
    out = np.zeros(layout.d, dtype=np.int64)
    out[: counts.size] = counts
    return out


# Users x level-domain cells above which OLH simulation is refused.
OLH_CELL_LIMIT = 1 << 31


def simulate_hh(true_counts, layout: TreeLayout, priv: PrivacySpec, oracle: str,
                rng: np.random.Generator) -> NodeEstimates:
    """Population-level simulation, equal in distribution to aggregating every user's report.

    OUE draws two binomials per node, HRR uses ``hrr_simulate_sums``; OLH has no
    shortcut and decodes every simulated report.
    """
    per_level = split_levels(true_counts, layout, rng)
    levels = [np.ones(1)]
    counts = [0]
    for level in range(1, layout.h + 1):
        size = layout.level_size(level)
        node_counts = per_level[level - 1].reshape(size, -1).sum(axis=1)
        n_l = int(node_counts.sum())
        if n_l == 0:
            raise MissingLevelError(level)
        if oracle == "oue":
            theta = oue_estimate_from_counts(oue_simulate_counts(node_counts, priv, rng), n_l, priv).theta_hat
        elif oracle == "hrr":
            m = next_power_of_two(size)
            sums, cnt = hrr_simulate_sums(np.arange(size), np.ones(size, dtype=np.int64),
                                          node_counts, m, priv, rng)
            theta = fast_walsh_hadamard(hrr_coefficients(sums, cnt, priv), inverse=True)[:size]
        elif oracle == "olh":
            if n_l * size > OLH_CELL_LIMIT:
                raise CapacityError(f"OLH decode of {n_l} reports over {size} nodes exceeds "
                                    f"{OLH_CELL_LIMIT} cells")
            acc = OlhAccumulator(DomainSpec(size), olh_hash_size(priv))
            nodes = np.repeat(np.arange(size), node_counts)
            acc.add_batch(*olh_perturb_batch(nodes, DomainSpec(size), priv, rng))
            theta = acc.estimate(priv).theta_hat
        else:
            raise DomainError(f"unknown oracle {oracle!r}; expected one of {ORACLES}")
        levels.append(theta)
        counts.append(n_l)
    return NodeEstimates(layout, tuple(levels), tuple(counts))


def true_node_fractions(true_counts, layout: TreeLayout) -> NodeEstimates:
    """Noise-free tree of subtree masses; useful as ground truth and as a noiseless estimate."""
    counts = np.asarray(true_counts, dtype=np.float64).ravel()
    if counts.size > layout.d or (counts.size and counts.min() < 0):
        raise DomainError(f"need at most {layout.d} non-negative counts")
    total = counts.sum()
    if total <= 0:
        raise DomainError("need at least one user")
    frac = np.zeros(layout.d)
    frac[: counts.size] = counts / total
    levels = [frac.reshape(layout.level_size(l), -1).sum(axis=1) for l in range(layout.h + 1)]
    return NodeEstimates(layout, tuple(levels), (0,) * (layout.h + 1), consistent=True)


def hh_answer_range(est: NodeEstimates, a: int, b: int) -> float:
    if b >= est.layout.domain:
        raise DomainError(f"range [{a}, {b}] reaches past the domain end {est.layout.domain - 1}")
    return float(sum(est.levels[n.level][n.index] for n in b_adic_decompose(a, b, est.layout)))


def hh_variance_bound(b: int, r: int, d: int, priv: PrivacySpec, n: int) -> float:
    """(2B - 1) V_F h (ceil(log_B r) + 1) with uniform level sampling."""
    if not 1 <= r <= d:
        raise DomainError(f"range length {r} outside [1, {d}]")
    h = max(1, int_log_ceil(b, d))
    return (2 * b - 1) * variance_formula("oue", priv, n) * h * (int_log_ceil(b, r) + 1)


def hh_avg_error_bound(b: int, d: int, priv: PrivacySpec, n: int) -> float:
    """Approximate worst-case error averaged over all ranges: 2(B-1) V_F log_B D log_B(3D^2/(1+2D))."""
    if d < 2:
        raise DomainError("need a domain of at least two items")
    log_b = lambda x: math.log(x) / math.log(b)
    return 2 * (b - 1) * variance_formula("oue", priv, n) * log_b(d) * log_b(3 * d * d / (1 + 2 * d))


def optimal_branching() -> float:
    """Root of B ln B - 2B + 2, the stationary point of 2(B-1) log_B r log_B D."""
    return brentq(lambda x: x * math.log(x) - 2 * x + 2, 2.0, 20.0)
