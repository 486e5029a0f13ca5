import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ldprange.errors import DomainError, EmptyInputError, MissingLevelError
from ldprange.freq_oracle import PrivacySpec, ldp_ratio_check, variance_formula
from ldprange.freq_oracle.hrr import HrrReport
from ldprange.wavelet import (
    HaarAccumulator,
    HaarEstimates,
    HaarLayout,
    HaarReport,
    haar_aggregate,
    haar_answer_range,
    haar_encode_user,
    haar_matrix,
    haar_range_weights,
    haar_transform,
    haar_variance_bound,
    inverse_haar,
    simulate_haar,
)


def test_matrix_first_row_d8():
    row = haar_matrix(8)[0] * math.sqrt(8)
    assert np.allclose(row, [1, 1, math.sqrt(2), 0, 2, 0, 0, 0])


def test_matrix_is_orthonormal():
    M = haar_matrix(64)
    assert np.allclose(M.T @ M, np.eye(64), atol=1e-12)


def test_constant_vector_has_only_average():
    c = haar_transform(np.full(16, 3.0))
    assert c[0] == pytest.approx(3.0 * 4)
    assert np.allclose(c[1:], 0)


def test_round_trip_d1024():
    x = np.random.default_rng(0).normal(size=1024)
    c = haar_transform(x)
    assert np.allclose(c, haar_matrix(1024).T @ x, atol=1e-12)
    assert np.abs(inverse_haar(c) - x).max() <= 1e-12
    assert np.allclose(inverse_haar(c), haar_matrix(1024) @ c, atol=1e-12)


@given(st.integers(0, 10), st.integers(0, 2**31))
@settings(max_examples=40, deadline=None)
def test_transform_preserves_norm(log_d, seed):
    x = np.random.default_rng(seed).normal(size=1 << log_d)
    assert np.linalg.norm(haar_transform(x)) == pytest.approx(np.linalg.norm(x), rel=1e-10)


def test_bad_lengths():
    with pytest.raises(DomainError):
        haar_transform(np.ones(6))
    with pytest.raises(DomainError):
        inverse_haar(np.ones(0))


def test_item_position_and_sign():
    layout = HaarLayout(64)
    M = haar_matrix(64)
    for item in range(64):
        for level in range(1, layout.h + 1):
            block = M[item, layout.offset(level): 2 * layout.offset(level)]
            k = np.flatnonzero(block)
            assert k.tolist() == [item >> level]
            assert np.sign(block[k[0]]) == (1 if (item >> (level - 1)) & 1 == 0 else -1)


def test_layout_pads_domain():
    layout = HaarLayout(50)
    assert (layout.d, layout.h, layout.level_size(1)) == (64, 6, 32)
    with pytest.raises(DomainError):
        HaarLayout(1)


def test_d2_is_one_bit_rr():
    layout = HaarLayout(2)
    rng = np.random.default_rng(1)
    priv = PrivacySpec(math.log(3))
    reports = [haar_encode_user(1, layout, priv, rng) for _ in range(4000)]
    assert {r.level for r in reports} == {1} and {r.inner.index for r in reports} == {0}
    # item 1 has sign -1; the bit is kept with probability e/(1+e) = 3/4
    assert np.mean([r.inner.bit == -1 for r in reports]) == pytest.approx(0.75, abs=0.02)


@pytest.mark.parametrize("eps", [0.2, 1.1])
def test_channel_ratio_d8(eps):
    priv = PrivacySpec(eps)
    assert ldp_ratio_check("haar", 8, priv) <= priv.e_eps * (1 + 1e-9)


def test_noiseless_point_mass_recovered():
    layout = HaarLayout(32)
    priv = PrivacySpec(45.0)
    rng = np.random.default_rng(2)
    est = haar_aggregate([haar_encode_user(13, layout, priv, rng) for _ in range(3000)], layout, priv)
    assert np.allclose(est.leaves(), np.eye(32)[13], atol=1e-9)


def test_aggregate_errors():
    layout = HaarLayout(8)
    priv = PrivacySpec(1.0)
    with pytest.raises(EmptyInputError):
        haar_aggregate([], layout, priv)
    with pytest.raises(MissingLevelError, match="level 2"):
        haar_aggregate([HaarReport(1, HrrReport(0, 1)), HaarReport(3, HrrReport(0, 1))], layout, priv)


def test_accumulator_merge():
    layout = HaarLayout(16)
    priv = PrivacySpec(1.0)
    rng = np.random.default_rng(3)
    reports = [haar_encode_user(int(x), layout, priv, rng) for x in rng.integers(0, 16, 2000)]
    a, b, both = (HaarAccumulator(layout, priv) for _ in range(3))
    for i, r in enumerate(reports):
        (a if i % 2 else b).add(r)
        both.add(r)
    assert np.allclose(a.merge(b).finalize().coefficients(), both.finalize().coefficients())


def test_coefficients_unbiased_d64():
    layout = HaarLayout(64)
    priv = PrivacySpec(1.1)
    n = 1_000_000
    counts = np.random.default_rng(4).multinomial(n, np.arange(1, 65) / np.arange(1, 65).sum())
    truth = haar_transform(counts / n)
    rng = np.random.default_rng(5)
    runs = np.array([simulate_haar(counts, layout, priv, rng).coefficients() for _ in range(200)])
    se = runs.std(axis=0, ddof=1) / np.sqrt(200)
    assert runs[:, 0] == pytest.approx(np.full(200, 1 / 8))
    assert np.all(np.abs(runs.mean(axis=0) - truth)[1:] < 5 * se[1:])
    # ±1-scale coefficient variance is h V_F plus the HRR concentration term
    level1 = runs[:, 32:] * 2 ** 0.5
    vf_level = layout.h * variance_formula("hrr", priv, n)
    assert vf_level <= level1.var(axis=0).mean() <= vf_level + layout.h / n * 1.1


def test_simulation_matches_per_user():
    layout = HaarLayout(16)
    priv = PrivacySpec(1.0)
    counts = np.arange(16) * 40
    items = np.repeat(np.arange(16), counts)
    rng = np.random.default_rng(6)
    fast, slow = [], []
    for _ in range(300):
        fast.append(simulate_haar(counts, layout, priv, rng).coefficients())
        acc = HaarAccumulator(layout, priv)
        acc.add_users(items, rng)
        slow.append(acc.finalize().coefficients())
    fast, slow = np.array(fast), np.array(slow)
    se = np.sqrt(fast.var(axis=0) / 300 + slow.var(axis=0) / 300)[1:]
    assert np.all(np.abs(fast.mean(axis=0) - slow.mean(axis=0))[1:] < 5 * se)
    assert fast[:, 1:].var(axis=0).mean() == pytest.approx(slow[:, 1:].var(axis=0).mean(), rel=0.15)


def test_range_answer_equals_inverse_transform_sums():
    layout = HaarLayout(64)
    est = HaarEstimates.from_coefficients(layout, np.random.default_rng(7).normal(size=64))
    cum = np.concatenate([[0], np.cumsum(est.leaves())])
    for a in range(64):
        for b in range(a, 64):
            assert haar_answer_range(est, a, b) == pytest.approx(cum[b + 1] - cum[a], abs=1e-9)


def test_full_range_is_average_only():
    layout = HaarLayout(32)
    assert haar_range_weights(0, 31, layout) == []
    est = HaarEstimates.from_coefficients(layout, np.r_[1 / math.sqrt(32), np.ones(31)])
    assert haar_answer_range(est, 0, 31) == pytest.approx(1.0)


def test_consulted_coefficients():
    layout = HaarLayout(128)
    for a in range(0, 128, 7):
        for b in range(a, 128, 3):
            assert len(haar_range_weights(a, b, layout)) <= 2 * layout.h
    for b in range(128):
        assert len(haar_range_weights(0, b, layout)) <= layout.h


def test_range_errors():
    layout = HaarLayout(10)
    est = simulate_haar(np.ones(10, dtype=int) * 100, layout, PrivacySpec(1.0), np.random.default_rng(8))
    with pytest.raises(DomainError):
        haar_answer_range(est, 3, 10)
    with pytest.raises(DomainError):
        haar_answer_range(est, 4, 3)


def test_variance_bound_values():
    priv = PrivacySpec(math.log(3))
    assert haar_variance_bound(2, priv, 10) == pytest.approx(variance_formula("hrr", priv, 10) / 2)
    assert haar_variance_bound(256, priv, 1 << 26) == pytest.approx(32 * 3 / 2**26)


def test_range_variance_below_bound_d64():
    layout = HaarLayout(64)
    priv = PrivacySpec(1.1)
    n = 1 << 20
    counts = np.random.default_rng(9).multinomial(n, np.full(64, 1 / 64))
    truth = np.concatenate([[0], np.cumsum(counts / n)])
    rng = np.random.default_rng(10)
    a, b = np.triu_indices(64)
    sq = np.zeros(a.size)
    for _ in range(5):
        cum = np.concatenate([[0], np.cumsum(simulate_haar(counts, layout, priv, rng).leaves())])
        sq += ((cum[b + 1] - cum[a]) - (truth[b + 1] - truth[a])) ** 2
    assert np.all(sq / 5 <= haar_variance_bound(64, priv, n) * 3)
    assert (sq / 5).mean() <= haar_variance_bound(64, priv, n)
