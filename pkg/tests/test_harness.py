import numpy as np
import pytest

from ldprange import rng as rngmod
from ldprange.errors import CapacityError, DomainError
from ldprange.freq_oracle import PrivacySpec, variance_formula
from ldprange.harness import (
    DataSpec,
    ExperimentConfig,
    MethodSpec,
    QuerySet,
    build_query_set,
    parse_method,
    predictor_table,
    range_bound,
    range_errors,
    run_experiment,
    run_quantiles,
    sample_cauchy,
    simulate_method,
)
from ldprange.query_engine import Estimator, answer_range


def test_cauchy_median_near_center():
    counts = sample_cauchy(DataSpec(1000, 200_000, 0.4), np.random.default_rng(0))
    assert counts.sum() == 200_000
    median = np.searchsorted(np.cumsum(counts), 100_000)
    assert abs(median - 400) <= 5


def test_zero_height_is_point_mass():
    counts = sample_cauchy(DataSpec(64, 5000, 0.5, height=0.0), np.random.default_rng(1))
    assert counts[32] == 5000


def test_data_spec_validation():
    with pytest.raises(DomainError):
        DataSpec(64, 100, 1.0)
    with pytest.raises(DomainError):
        DataSpec(0, 100)


def test_query_counts():
    assert len(QuerySet(4)) == 10
    assert list(QuerySet(4).queries()) == [(0, 0), (0, 1), (0, 2), (0, 3), (1, 1), (1, 2), (1, 3),
                                           (2, 2), (2, 3), (3, 3)]
    assert QuerySet(4).length_counts().tolist() == [0, 4, 3, 2, 1]
    assert len(build_query_set(1 << 20, 1 << 15)) == 17_301_504
    big = build_query_set(1 << 20)
    assert big.stride == (1 << 15) and not big.exhaustive
    qs = QuerySet(10, 3)
    assert qs.length_counts().sum() == len(qs) == sum(1 for _ in qs.queries())


def test_method_parsing():
    assert parse_method("hh_c:4") == MethodSpec("hh_c", 4, "oue")
    assert parse_method("flat@olh").name == "flat@olh"
    assert parse_method("hh:16").simulation_key == parse_method("hh_c:16").simulation_key
    for bad in ("hh", "hh:1", "tree:4", "haar@oue"):
        with pytest.raises(DomainError):
            parse_method(bad)


@pytest.mark.parametrize("stride", [1, 5])
@pytest.mark.parametrize("name", ["flat", "hh:4", "hh_c:4", "haar"])
def test_range_errors_match_brute_force(name, stride):
    d = 37
    counts = np.random.default_rng(2).integers(0, 200, d)
    truth = counts / counts.sum()
    est = simulate_method(parse_method(name), counts, PrivacySpec(1.0), np.random.default_rng(3))
    qs = QuerySet(d, stride)
    sse, prefix = range_errors(est, truth, qs)
    cum = np.concatenate([[0], np.cumsum(truth)])
    brute = np.zeros(d + 1)
    for a, b in qs.queries():
        brute[b - a + 1] += (answer_range(est, (a, b)) - (cum[b + 1] - cum[a])) ** 2
    assert np.allclose(sse, brute, rtol=1e-8, atol=1e-15)
    pref = [(answer_range(est, (0, b)) - cum[b + 1]) ** 2 for b in range(d)]
    assert np.allclose(prefix, pref, rtol=1e-8, atol=1e-15)


def small_config(**kw):
    base = dict(d=32, epsilon=1.1, n=20_000, methods=("hh:2", "hh_c:2", "haar", "flat"), reps=3, seed=5)
    base.update(kw)
    return ExperimentConfig(**base)


def test_experiment_is_deterministic():
    a, b = run_experiment(small_config()), run_experiment(small_config())
    for m in a.methods:
        assert np.array_equal(m.mse_by_length, b.method(m.method.name).mse_by_length, equal_nan=True)
    c = run_experiment(small_config(seed=6))
    assert not np.array_equal(a.methods[0].mse_by_length, c.methods[0].mse_by_length, equal_nan=True)


def test_parallel_jobs_match_serial():
    a, b = run_experiment(small_config()), run_experiment(small_config(jobs=2))
    for m in a.methods:
        assert np.array_equal(m.mse_by_length, b.method(m.method.name).mse_by_length, equal_nan=True)


def test_result_shapes():
    res = run_experiment(small_config())
    m = res.method("haar")
    assert m.mse_by_length.shape == (3, 33)
    assert m.mean_by_length.shape == (33,)
    assert np.all(np.isnan(m.mse_by_length[:, 0]))  # no queries of length 0
    assert m.query_counts[1:].sum() == 32 * 33 // 2
    with pytest.raises(KeyError):
        res.method("flat@olh")


def test_huge_epsilon_is_nearly_exact():
    # OUE keeps the true bit only half the time even as eps grows, so the
    # residual error shrinks like 1/N instead of vanishing
    res = run_experiment(small_config(epsilon=50.0, n=1 << 22, methods=("hh_c:2", "haar", "flat")))
    for m in res.methods:
        assert m.mean_overall <= 1e-6


def test_capacity_errors():
    with pytest.raises(CapacityError):
        ExperimentConfig(d=1 << 20, epsilon=1.1, n=1 << 10, methods=("flat@olh",))
    with pytest.raises(CapacityError):
        ExperimentConfig(d=1 << 12, epsilon=1.1, n=1 << 20, methods=("flat@olh",))
    with pytest.raises(DomainError):
        ExperimentConfig(d=16, epsilon=1.1, n=100, methods=())


def test_fast_and_per_user_modes_agree():
    d, n = 1 << 8, 100_000
    counts = sample_cauchy(DataSpec(d, n), np.random.default_rng(7))
    truth = counts / n
    qs = QuerySet(d)
    out = {}
    for mode in ("fast", "per_user"):
        vals = []
        for rep in range(10):
            est = simulate_method(parse_method("flat"), counts, PrivacySpec(1.1), rngmod.stream(7, rep, mode), mode)
            sse, _ = range_errors(est, truth, qs)
            vals.append(sse.sum() / len(qs))
        out[mode] = np.array(vals)
    pooled = np.sqrt(out["fast"].var(ddof=1) / 10 + out["per_user"].var(ddof=1) / 10)
    assert abs(out["fast"].mean() - out["per_user"].mean()) <= 4 * pooled
    expected = (d + 2) * variance_formula("oue", PrivacySpec(1.1), n) / 3
    assert out["fast"].mean() == pytest.approx(expected, rel=0.25)


def test_range_bounds_and_predictor_table():
    priv = PrivacySpec(1.1)
    n = 1 << 26
    vf = variance_formula("oue", priv, n)
    assert range_bound(parse_method("flat"), 7, 256, priv, n) == pytest.approx(7 * vf)
    assert range_bound(parse_method("hh_c:4"), 16, 256, priv, n) == pytest.approx(2.5 * vf * 4 * 3)
    rows = predictor_table(256, 8, priv, n)
    assert [r["r"] for r in rows] == [1 << k for k in range(9)]
    last = rows[-1]
    assert last["hh_consistent"] == pytest.approx(32 * vf)
    assert last["haar"] == pytest.approx(32 * vf)
    assert last["flat_avg"] == pytest.approx(86 * vf)


def test_quantile_rows():
    cfg = ExperimentConfig(d=256, epsilon=1.1, n=1 << 16, methods=("hh_c:4", "haar"), reps=2, seed=1)
    rows = run_quantiles(cfg, centers=(0.5,), phis=(0.25, 0.5))
    assert len(rows) == 2 * 2 * 2
    assert {r.method for r in rows} == {"hh_c:4", "haar"}
    assert all(r.value_error == (r.est_value - r.true_value) ** 2 for r in rows)
    assert run_quantiles(cfg, centers=(0.5,), phis=(0.25, 0.5)) == rows


def test_flat_estimator_from_counts_has_domain():
    est = simulate_method(parse_method("flat@hrr"), np.arange(10), PrivacySpec(1.0), np.random.default_rng(0))
    assert isinstance(est, Estimator) and est.domain == 10
