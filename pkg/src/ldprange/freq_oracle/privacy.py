"""Exact channel enumeration and the shared closed-form variance V_F."""

from __future__ import annotations

import numpy as np

from ..errors import CapacityError, DomainError
from .core import DomainSpec, PrivacySpec, is_power_of_two
from .hadamard import hadamard_matrix
from .olh import olh_hash, olh_hash_size, olh_keep_prob

MECHANISMS = ("rr1", "oue", "olh", "hrr", "haar")
MAX_OUE_BITS = 16
MAX_HRR_DOMAIN = 1 << 12
OLH_KEYS = 256


def variance_formula(mechanism: str, priv: PrivacySpec, n: int) -> float:
    """V_F = 4 e^eps / (N (e^eps - 1)^2), shared by OUE, OLH and HRR."""
    if mechanism not in ("oue", "olh", "hrr"):
        raise DomainError(f"no variance formula for mechanism {mechanism!r}")
    if n <= 0:
        raise DomainError(f"population must be positive, got {n}")
    e = priv.e_eps
    return 4.0 * e / (n * (e - 1.0) ** 2)


def channel_matrix(mechanism: str, d, priv: PrivacySpec) -> np.ndarray:
    """Rows are inputs, columns enumerate every possible output, entries are Pr[output | input]."""
    d = d if isinstance(d, DomainSpec) else DomainSpec(int(d))
    if mechanism == "rr1":
        if d.d != 2:
            raise DomainError("1-bit randomized response has a domain of size 2")
        p = priv.rr_keep
        return np.array([[p, 1 - p], [1 - p, p]])
    if mechanism == "oue":
        if d.d > MAX_OUE_BITS:
            raise CapacityError(f"OUE enumeration needs 2^D outputs; limit is D <= {MAX_OUE_BITS}")
        outputs = (np.arange(1 << d.d)[:, None] >> np.arange(d.d)[None, :]) & 1
        q = priv.oue_q
        rows = []
        for z in range(d.d):
            one_prob = np.full(d.d, q)
            one_prob[z] = 0.5
            rows.append(np.prod(np.where(outputs == 1, one_prob, 1 - one_prob), axis=1))
        return np.array(rows)
    if mechanism == "hrr":
        m = d.padded_d
        if m > MAX_HRR_DOMAIN:
            raise CapacityError(f"HRR enumeration limit is D <= {MAX_HRR_DOMAIN}")
        return _hrr_channel(hadamard_matrix(m)[: d.d], priv)
    if mechanism == "olh":
        return _olh_channel(d, priv)
    if mechanism == "haar":
        from ..wavelet import haar_channel_matrix

        return haar_channel_matrix(d.d, priv)
    raise DomainError(f"unknown mechanism {mechanism!r}; expected one of {MECHANISMS}")


def _hrr_channel(truth: np.ndarray, priv: PrivacySpec) -> np.ndarray:
    """Outputs ordered (index j, bit +1) then (index j, bit -1); truth holds the +/-1 entries."""
    p = priv.rr_keep
    m = truth.shape[1]
    plus = np.where(truth > 0, p, 1 - p) / m
    minus = np.where(truth < 0, p, 1 - p) / m
    return np.concatenate([plus, minus], axis=1)


def _olh_channel(d: DomainSpec, priv: PrivacySpec) -> np.ndarray:
    # Keys are independent of the input, so each key contributes its own block of g outputs.
    g = olh_hash_size(priv)
    if d.d * OLH_KEYS * g > 1 << 24:
        raise CapacityError("OLH enumeration too large for the requested domain")
    p = olh_keep_prob(priv, g)
    q = (1 - p) / (g - 1)
    keys = np.arange(OLH_KEYS, dtype=np.uint64)
    hashed = olh_hash(keys[None, :], np.arange(d.d, dtype=np.uint64)[:, None], g)
    probs = np.where(hashed[:, :, None] == np.arange(g)[None, None, :], p, q) / OLH_KEYS
    return probs.reshape(d.d, OLH_KEYS * g)


def ldp_ratio_check(mechanism: str, d, priv: PrivacySpec) -> float:
    """Largest Pr[F(z)=O] / Pr[F(z')=O] over all input pairs and outputs."""
    chan = channel_matrix(mechanism, d, priv)
    hi = chan.max(axis=0)
    lo = chan.min(axis=0)
    if np.any((lo == 0) & (hi > 0)):
        return float("inf")
    live = hi > 0
    return float(np.max(hi[live] / lo[live]))
