"""Shared value types for the frequency oracles."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import DomainError


def next_power_of_two(n: int) -> int:
    if n < 1:
        raise DomainError(f"expected a positive size, got {n}")
    return 1 << (n - 1).bit_length()


def is_power_of_two(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


@dataclass(frozen=True)
class PrivacySpec:
    """Privacy budget with the channel probabilities every mechanism derives from it."""

    epsilon: float
    e_eps: float = field(init=False)

    def __post_init__(self):
        if not (self.epsilon > 0) or math.isinf(self.epsilon) or math.isnan(self.epsilon):
            raise DomainError(f"epsilon must be a positive finite number, got {self.epsilon}")
        object.__setattr__(self, "e_eps", math.exp(self.epsilon))

    @property
    def rr_keep(self) -> float:
        """Probability binary randomized response reports the true bit."""
        return self.e_eps / (1.0 + self.e_eps)

    @property
    def oue_q(self) -> float:
        """OUE probability that a zero bit is reported as one."""
        return 1.0 / (1.0 + self.e_eps)


@dataclass(frozen=True)
class DomainSpec:
    d: int
    padded_d: int = field(init=False)

    def __post_init__(self):
        if not isinstance(self.d, (int, np.integer)) or self.d < 1:
            raise DomainError(f"domain size must be a positive integer, got {self.d!r}")
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "padded_d", next_power_of_two(self.d))

    def check_item(self, item: int, padded: bool = False) -> int:
        limit = self.padded_d if padded else self.d
        if not 0 <= item < limit:
            raise DomainError(f"item {item} outside [0, {limit})")
        return int(item)


@dataclass(frozen=True)
class FrequencyEstimate:
    """Unbiased fractional frequencies; entries are never clipped, so they may be negative."""

    theta_hat: np.ndarray
    n_reports: int

    def __post_init__(self):
        arr = np.array(self.theta_hat, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(self, "theta_hat", arr)
