"""Point-frequency oracles under local differential privacy: OUE, OLH and HRR."""

from .core import DomainSpec, FrequencyEstimate, PrivacySpec, is_power_of_two, next_power_of_two
from .hadamard import fast_walsh_hadamard, hadamard_entry, hadamard_matrix
from .hrr import (
    HrrAccumulator,
    HrrReport,
    hrr_aggregate,
    hrr_coefficients,
    hrr_perturb,
    hrr_perturb_batch,
    hrr_simulate_sums,
)
from .olh import (
    OlhAccumulator,
    OlhReport,
    olh_aggregate,
    olh_hash,
    olh_hash_size,
    olh_keep_prob,
    olh_perturb,
    olh_perturb_batch,
)
from .oue import (
    OueAccumulator,
    OueReport,
    oue_aggregate,
    oue_estimate_from_counts,
    oue_perturb,
    oue_perturb_batch,
    oue_simulate_counts,
)
from .privacy import MECHANISMS, channel_matrix, ldp_ratio_check, variance_formula

ORACLES = ("oue", "olh", "hrr")

__all__ = [
    "ORACLES", "MECHANISMS",
    "DomainSpec", "FrequencyEstimate", "PrivacySpec", "is_power_of_two", "next_power_of_two",
    "fast_walsh_hadamard", "hadamard_entry", "hadamard_matrix",
    "HrrAccumulator", "HrrReport", "hrr_aggregate", "hrr_coefficients", "hrr_perturb",
    "hrr_perturb_batch", "hrr_simulate_sums",
    "OlhAccumulator", "OlhReport", "olh_aggregate", "olh_hash", "olh_hash_size", "olh_keep_prob",
    "olh_perturb", "olh_perturb_batch",
    "OueAccumulator", "OueReport", "oue_aggregate", "oue_estimate_from_counts", "oue_perturb",
    "oue_perturb_batch", "oue_simulate_counts",
    "channel_matrix", "ldp_ratio_check", "variance_formula",
]
