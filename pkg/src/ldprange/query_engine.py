"""One interface over flat, hierarchical and Haar estimates: ranges, prefixes and quantiles."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .consistency import post_ci_variance_bound
from .errors import DegenerateEstimateError, DomainError
from .freq_oracle import FrequencyEstimate, PrivacySpec, variance_formula
from .hierarchy import NodeEstimates, hh_answer_range, hh_variance_bound
from .wavelet import HaarEstimates, haar_answer_range, haar_variance_bound

VARIANTS = ("flat", "hh", "hh_consistent", "haar")


class RangeQuery(NamedTuple):
    a: int
    b: int

    @property
    def r(self) -> int:
        return self.b - self.a + 1


@dataclass(frozen=True)
class Estimator:
    """A finalized estimate tagged with how ranges are evaluated against it.

    ``domain`` is the number of answerable items; flat estimates may carry
    padding beyond it.
    """

    variant: str
    value: object
    domain: int

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise DomainError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.variant == "hh_consistent" and not self.value.consistent:
            raise DomainError("hh_consistent estimator needs consistency-enforced node estimates")

    @classmethod
    def flat(cls, est: FrequencyEstimate | np.ndarray, domain: int | None = None) -> "Estimator":
        theta = est.theta_hat if isinstance(est, FrequencyEstimate) else np.asarray(est, dtype=np.float64)
        theta = np.array(theta)
        theta.setflags(write=False)
        return cls("flat", theta, domain or theta.size)

    @classmethod
    def hierarchy(cls, est: NodeEstimates) -> "Estimator":
        return cls("hh_consistent" if est.consistent else "hh", est, est.layout.domain)

    @classmethod
    def haar(cls, est: HaarEstimates) -> "Estimator":
        return cls("haar", est, est.layout.domain)


def _check(est: Estimator, a: int, b: int) -> None:
    if not 0 <= a <= b < est.domain:
        raise DomainError(f"invalid range [{a}, {b}] for domain [0, {est.domain})")


def answer_range(est: Estimator, q) -> float:
    a, b = int(q[0]), int(q[1])
    _check(est, a, b)
    if est.variant == "flat":
        return float(np.sum(est.value[a: b + 1]))
    if est.variant in ("hh", "hh_consistent"):
        return hh_answer_range(est.value, a, b)
    return haar_answer_range(est.value, a, b)


def answer_prefix(est: Estimator, b: int) -> float:
    return answer_range(est, (0, b))


def _hh_prefixes(est: NodeEstimates, n: np.ndarray) -> np.ndarray:
    # The greedy cover of [0, n-1] takes, at each level, the base-B digit of n
    # at that level's block size; the root is never used.
    layout = est.layout
    out = np.zeros(n.size)
    for level in range(1, layout.h + 1):
        s = layout.block(level)
        cum = np.concatenate([[0.0], np.cumsum(est.levels[level])])
        lo = np.zeros_like(n) if level == 1 else (n // (s * layout.b)) * layout.b
        out += cum[n // s] - cum[lo]
    return out


def prefix_values(est: Estimator) -> np.ndarray:
    """answer_prefix(j) for every j in [0, domain), computed in bulk."""
    d = est.domain
    if est.variant == "flat":
        return np.cumsum(est.value[:d])
    if est.variant == "hh":
        return _hh_prefixes(est.value, np.arange(1, d + 1))
    if est.variant == "hh_consistent":
        return np.cumsum(est.value.leaves[:d])
    return np.cumsum(est.value.leaves()[:d])


def leaf_values(est: Estimator) -> np.ndarray:
    """Per-item estimates whose partial sums answer every range (consistent variants only)."""
    if est.variant == "flat":
        return np.array(est.value[: est.domain])
    if est.variant == "hh_consistent":
        return np.array(est.value.leaves[: est.domain])
    if est.variant == "haar":
        return est.value.leaves()[: est.domain]
    raise DomainError("raw hierarchical estimates have no range-consistent leaf vector")


@dataclass(frozen=True)
class QuantileResult:
    phi: float
    index: int
    value_error: float | None = None
    quantile_error: float | None = None


def true_quantile(true_counts, phi: float) -> int:
    """Smallest item whose empirical cdf reaches phi."""
    cdf = _cdf(true_counts)
    return int(min(np.searchsorted(cdf, phi, side="left"), cdf.size - 1))


def _cdf(true_counts) -> np.ndarray:
    counts = np.asarray(true_counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise DomainError("true data must contain at least one user")
    return np.cumsum(counts) / total


def quantile(est: Estimator, phi: float, true_counts=None, prefixes=None) -> QuantileResult:
    """Smallest j whose (running-maximum) prefix estimate reaches phi times the estimated total.

    With ``true_counts``, value_error is the squared index distance to the true
    quantile and quantile_error is how far phi lies outside [F(j-1), F(j)] of the
    true cdf F, i.e. the smallest |phi - q| over quantiles q that j represents.
    """
    if not 0.0 <= phi <= 1.0:
        raise DomainError(f"phi must lie in [0, 1], got {phi}")
    pref = prefix_values(est) if prefixes is None else prefixes
    total = pref[-1]
    if not total > 0:
        raise DegenerateEstimateError(f"estimated total mass {total} is not positive")
    mono = np.maximum.accumulate(pref)
    j = int(min(np.searchsorted(mono, phi * total, side="left"), pref.size - 1))
    if true_counts is None:
        return QuantileResult(phi, j)
    cdf = _cdf(true_counts)
    lo = cdf[j - 1] if j > 0 else 0.0
    q_err = max(0.0, lo - phi, phi - cdf[j])
    t = true_quantile(true_counts, phi)
    return QuantileResult(phi, j, float((j - t) ** 2), float(q_err))


def predicted_variance(variant: str, r: int, d: int, priv: PrivacySpec, n: int, b: int | None = None) -> float:
    """Closed-form worst-case variance of a length-r range answer for each variant."""
    if variant == "flat":
        return r * variance_formula("oue", priv, n)
    if variant == "hh":
        return hh_variance_bound(b, r, d, priv, n)
    if variant == "hh_consistent":
        return post_ci_variance_bound(b, r, d, priv, n)
    if variant == "haar":
        return haar_variance_bound(d, priv, n)
    raise DomainError(f"unknown variant {variant!r}")
