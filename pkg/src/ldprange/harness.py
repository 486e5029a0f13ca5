"""Experiment engine: Cauchy workloads, population simulation and per-length range MSE."""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from . import rng as rngmod
from .consistency import enforce, post_ci_variance_bound
from .errors import CapacityError, DomainError
from .freq_oracle import (
    DomainSpec,
    FrequencyEstimate,
    HrrAccumulator,
    OlhAccumulator,
    OueAccumulator,
    PrivacySpec,
    fast_walsh_hadamard,
    hrr_coefficients,
    hrr_perturb_batch,
    hrr_simulate_sums,
    next_power_of_two,
    olh_hash_size,
    olh_perturb_batch,
    oue_estimate_from_counts,
    oue_simulate_counts,
    variance_formula,
)
from .hierarchy import (
    HierarchyAccumulator,
    TreeLayout,
    hh_range_sums,
    hh_variance_bound,
    int_log_ceil,
    simulate_hh,
    true_node_fractions,
)
from .query_engine import Estimator, leaf_values, prefix_values, quantile, true_quantile
from .wavelet import HaarAccumulator, HaarLayout, haar_variance_bound, simulate_haar

MODES = ("fast", "per_user")
EXHAUSTIVE_LIMIT = 1 << 16
OLH_MAX_DOMAIN = 1 << 16
OLH_CELL_LIMIT = 1 << 31
# Raw hierarchical answers need a per-query cover; cap the number of evaluated queries.
RAW_HH_QUERY_LIMIT = 1 << 26


@dataclass(frozen=True)
class DataSpec:
    d: int
    n: int
    center_fraction: float = 0.4
    height: float | None = None

    def __post_init__(self):
        if self.d < 1 or self.n < 1:
            raise DomainError("domain size and population must be positive")
        if not 0.0 < self.center_fraction < 1.0:
            raise DomainError(f"center fraction must lie in (0, 1), got {self.center_fraction}")
        if self.height is not None and self.height < 0:
            raise DomainError("height must be non-negative")

    @property
    def scale(self) -> float:
        return self.d / 10 if self.height is None else self.height


def sample_cauchy(spec: DataSpec, rng: np.random.Generator) -> np.ndarray:
    """Count histogram of N rounded Cauchy draws, redrawing any that land outside [0, D)."""
    loc = spec.center_fraction * spec.d
    counts = np.zeros(spec.d, dtype=np.int64)
    need = spec.n
    while need:
        batch = min(max(2 * need, 1024), 1 << 24)
        draws = np.rint(loc + spec.scale * rng.standard_cauchy(batch))
        draws = draws[(draws >= 0) & (draws < spec.d)][:need].astype(np.int64)
        counts += np.bincount(draws, minlength=spec.d)
        need -= draws.size
    return counts


@dataclass(frozen=True)
class QuerySet:
    """All ranges [a, b] with a drawn from evenly spaced starts and every b >= a."""

    d: int
    stride: int = 1

    def __post_init__(self):
        if self.stride < 1:
            raise DomainError(f"stride must be at least 1, got {self.stride}")

    @property
    def exhaustive(self) -> bool:
        return self.stride == 1

    @property
    def starts(self) -> np.ndarray:
        return np.arange(0, self.d, self.stride)

    def __len__(self) -> int:
        return int(np.sum(self.d - self.starts))

    def length_counts(self) -> np.ndarray:
        """Number of queries of each length r, indexed by r in [0, D]."""
        return np.bincount(self.d - self.starts, minlength=self.d + 1)[::-1].cumsum()[::-1] * (
            np.arange(self.d + 1) > 0)

    def queries(self):
        for a in self.starts:
            for b in range(int(a), self.d):
                yield int(a), b


def build_query_set(d: int, stride: int = 1) -> QuerySet:
    """Exhaustive when stride is 1 and D <= 2^16; larger domains fall back to 32 evenly spaced starts."""
    if stride < 1:
        raise DomainError(f"stride must be at least 1, got {stride}")
    if stride == 1 and d > EXHAUSTIVE_LIMIT:
        stride = d // 32
    return QuerySet(d, stride)


@dataclass(frozen=True)
class MethodSpec:
    """A range estimator: ``flat``, ``hh`` (raw tree), ``hh_c`` (consistent tree) or ``haar``."""

    kind: str
    b: int | None = None
    oracle: str | None = None

    def __post_init__(self):
        if self.kind not in ("flat", "hh", "hh_c", "haar"):
            raise DomainError(f"unknown method {self.kind!r}")
        if self.kind in ("hh", "hh_c") and (self.b is None or self.b < 2):
            raise DomainError(f"{self.kind} needs a branching factor of at least 2")
        if self.kind in ("flat", "haar") and self.b is not None:
            raise DomainError(f"{self.kind} takes no branching factor")
        default = "hrr" if self.kind == "haar" else "oue"
        oracle = self.oracle or default
        if self.kind == "haar" and oracle != "hrr":
            raise DomainError("the Haar method always uses HRR")
        if oracle not in ("oue", "olh", "hrr"):
            raise DomainError(f"unknown frequency oracle {oracle!r}")
        object.__setattr__(self, "oracle", oracle)

    @property
    def name(self) -> str:
        base = self.kind if self.b is None else f"{self.kind}:{self.b}"
        default = "hrr" if self.kind == "haar" else "oue"
        return base if self.oracle == default else f"{base}@{self.oracle}"

    @property
    def variant(self) -> str:
        return {"flat": "flat", "hh": "hh", "hh_c": "hh_consistent", "haar": "haar"}[self.kind]

    @property
    def simulation_key(self) -> str:
        # Raw and consistent trees with the same B and oracle post-process one simulation.
        return self.name.replace("hh_c:", "hh:")


def parse_method(text: str) -> MethodSpec:
    """Parse ``flat``, ``hh:B``, ``hh_c:B`` or ``haar``, optionally suffixed ``@oue|@olh|@hrr``."""
    text = text.strip()
    if not text:
        raise DomainError("empty method name")
    body, _, oracle = text.partition("@")
    kind, _, b = body.partition(":")
    try:
        branching = int(b) if b else None
    except ValueError:
        raise DomainError(f"bad branching factor in method {text!r}") from None
    return MethodSpec(kind, branching, oracle or None)


@dataclass(frozen=True)
class ExperimentConfig:
    d: int
    epsilon: float
    n: int
    methods: tuple
    center_fraction: float = 0.4
    height: float | None = None
    stride: int = 1
    reps: int = 5
    seed: int = 0
    mode: str = "fast"
    jobs: int = 1

    def __post_init__(self):
        if not self.methods:
            raise DomainError("at least one method is required")
        if self.reps < 1:
            raise DomainError("need at least one repetition")
        if self.mode not in MODES:
            raise DomainError(f"mode must be one of {MODES}")
        if self.d < 2:
            raise DomainError("domain needs at least two items")
        methods = tuple(m if isinstance(m, MethodSpec) else parse_method(m) for m in self.methods)
        object.__setattr__(self, "methods", methods)
        DataSpec(self.d, self.n, self.center_fraction, self.height)
        PrivacySpec(self.epsilon)
        for m in methods:
            check_capacity(m, self.d, self.n)

    @property
    def priv(self) -> PrivacySpec:
        return PrivacySpec(self.epsilon)

    @property
    def data_spec(self) -> DataSpec:
        return DataSpec(self.d, self.n, self.center_fraction, self.height)

    @property
    def query_set(self) -> QuerySet:
        return build_query_set(self.d, self.stride)


def check_capacity(method: MethodSpec, d: int, n: int) -> None:
    if method.oracle == "olh":
        if d > OLH_MAX_DOMAIN:
            raise CapacityError(f"OLH decoding is limited to D <= {OLH_MAX_DOMAIN}; got D={d}")
        if n * d > OLH_CELL_LIMIT:
            raise CapacityError(f"OLH decoding costs N*D = {n * d} operations; limit is {OLH_CELL_LIMIT}")
    if method.kind == "hh" and len(build_query_set(d)) > RAW_HH_QUERY_LIMIT:
        raise CapacityError(f"raw hierarchical evaluation is limited to {RAW_HH_QUERY_LIMIT} queries")


def _flat_estimate(counts, priv, oracle, mode, rng) -> FrequencyEstimate:
    d = counts.size
    n = int(counts.sum())
    if oracle == "olh" or mode == "per_user":
        items = np.repeat(np.arange(d), counts)
        dom = DomainSpec(d)
        if oracle == "oue":
            acc = OueAccumulator(dom)
            acc.add_users(items, priv, rng)
            return acc.estimate(priv)
        if oracle == "olh":
            acc = OlhAccumulator(dom, olh_hash_size(priv))
            acc.add_batch(*olh_perturb_batch(items, dom, priv, rng))
            return acc.estimate(priv)
        acc = HrrAccumulator(dom.padded_d)
        acc.add_batch(*hrr_perturb_batch(items, dom, priv, rng))
        return acc.estimate(priv, d)
    if oracle == "oue":
        return oue_estimate_from_counts(oue_simulate_counts(counts, priv, rng), n, priv)
    m = next_power_of_two(d)
    sums, cnt = hrr_simulate_sums(np.arange(d), np.ones(d, dtype=np.int64), counts, m, priv, rng)
    return FrequencyEstimate(fast_walsh_hadamard(hrr_coefficients(sums, cnt, priv), inverse=True)[:d], n)


def simulate_method(method: MethodSpec, counts, priv: PrivacySpec, rng: np.random.Generator,
                    mode: str = "fast") -> Estimator:
    """Run one method over the population described by ``counts`` and return its estimator."""
    counts = np.asarray(counts, dtype=np.int64)
    d = counts.size
    if method.kind == "flat":
        return Estimator.flat(_flat_estimate(counts, priv, method.oracle, mode, rng), d)
    if method.kind == "haar":
        layout = HaarLayout(d)
        if mode == "fast":
            return Estimator.haar(simulate_haar(counts, layout, priv, rng))
        acc = HaarAccumulator(layout, priv)
        acc.add_users(np.repeat(np.arange(d), counts), rng)
        return Estimator.haar(acc.finalize())
    layout = TreeLayout.for_domain(d, method.b)
    if mode == "fast":
        est = simulate_hh(counts, layout, priv, method.oracle, rng)
    else:
        acc = HierarchyAccumulator(layout, method.oracle, priv)
        acc.add_users(np.repeat(np.arange(d), counts), rng)
        est = acc.finalize()
    return Estimator.hierarchy(enforce(est) if method.kind == "hh_c" else est)


def _sse_from_prefix_errors(err: np.ndarray, qs: QuerySet) -> np.ndarray:
    """Sum over queries of each length r of (E[a + r] - E[a])^2, where E is the prefix error."""
    d = qs.d
    sse = np.zeros(d + 1)
    if qs.exhaustive:
        sq = err**2
        csum = np.concatenate([[0.0], np.cumsum(sq)])
        auto = fftconvolve(err, err[::-1])[d:]  # auto[r] = sum_a E[a] E[a + r]
        r = np.arange(1, d + 1)
        sse[1:] = (csum[d + 1] - csum[r]) + csum[d + 1 - r] - 2 * auto[1:]
        return np.maximum(sse, 0.0)
    for a in qs.starts:
        diff = err[a + 1:] - err[a]
        sse[1: d - a + 1] += diff**2
    return sse


def _sse_raw_hh(node_err, layout: TreeLayout, qs: QuerySet) -> np.ndarray:
    d = qs.d
    sse = np.zeros(d + 1)
    for a in qs.starts:
        ends = np.arange(a, d)
        e = hh_range_sums(node_err, layout, np.full(ends.size, a), ends)
        sse[1: d - a + 1] += e**2
    return sse


def range_errors(est: Estimator, truth_frac: np.ndarray, qs: QuerySet):
    """(per-length SSE over the query set, per-prefix squared errors)."""
    if est.variant == "hh":
        tree = est.value
        truth = true_node_fractions(truth_frac, tree.layout)
        node_err = [e - t for e, t in zip(tree.levels, truth.levels)]
        sse = _sse_raw_hh(node_err, tree.layout, qs)
        ends = np.arange(qs.d)
        prefix = hh_range_sums(node_err, tree.layout, np.zeros_like(ends), ends) ** 2
        return sse, prefix
    err = np.concatenate([[0.0], np.cumsum(leaf_values(est) - truth_frac)])
    return _sse_from_prefix_errors(err, qs), err[1:] ** 2


@dataclass
class MethodResult:
    method: MethodSpec
    mse_by_length: np.ndarray  # (reps, D + 1); column r is the MSE over queries of length r
    overall: np.ndarray  # (reps,)
    prefix: np.ndarray  # (reps,) MSE over all prefix queries
    query_counts: np.ndarray

    @property
    def mean_by_length(self) -> np.ndarray:
        return self.mse_by_length.mean(axis=0)

    @property
    def std_by_length(self) -> np.ndarray:
        return _std(self.mse_by_length)

    @property
    def mean_overall(self) -> float:
        return float(self.overall.mean())

    @property
    def std_overall(self) -> float:
        return float(_std(self.overall))

    @property
    def mean_prefix(self) -> float:
        return float(self.prefix.mean())


def _std(x: np.ndarray):
    return x.std(axis=0, ddof=1) if x.shape[0] > 1 else np.zeros(x.shape[1:])


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    methods: list = field(default_factory=list)
    wall_clock: float = 0.0

    def method(self, name: str) -> MethodResult:
        for m in self.methods:
            if m.method.name == name:
                return m
        raise KeyError(name)


def run_repetition(cfg: ExperimentConfig, rep: int) -> dict:
    """One repetition: fresh data, shared by every method; per-method SSE by length and prefix MSE."""
    counts = sample_cauchy(cfg.data_spec, rngmod.stream(cfg.seed, rep, "data"))
    truth = counts / counts.sum()
    qs = cfg.query_set
    qcount = qs.length_counts()
    priv = cfg.priv
    raw_trees = {}
    out = {}
    for m in cfg.methods:
        key = m.simulation_key
        if m.kind in ("hh", "hh_c"):
            if key not in raw_trees:
                raw = simulate_method(MethodSpec("hh", m.b, m.oracle), counts, priv,
                                      rngmod.stream(cfg.seed, rep, key), cfg.mode)
                raw_trees[key] = raw
            est = raw_trees[key]
            if m.kind == "hh_c":
                est = Estimator.hierarchy(enforce(est.value))
        else:
            est = simulate_method(m, counts, priv, rngmod.stream(cfg.seed, rep, key), cfg.mode)
        sse, prefix_sq = range_errors(est, truth, qs)
        with np.errstate(invalid="ignore", divide="ignore"):
            by_len = np.where(qcount > 0, sse / np.maximum(qcount, 1), np.nan)
        out[m.name] = (by_len, sse.sum() / qcount.sum(), prefix_sq.mean())
    return out


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    start = time.perf_counter()
    if cfg.jobs > 1 and cfg.reps > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            reps = list(pool.map(run_repetition, [cfg] * cfg.reps, range(cfg.reps)))
    else:
        reps = [run_repetition(cfg, rep) for rep in range(cfg.reps)]
    qcount = cfg.query_set.length_counts()
    result = ExperimentResult(cfg)
    for m in cfg.methods:
        rows = [r[m.name] for r in reps]
        result.methods.append(MethodResult(
            m,
            np.array([r[0] for r in rows]),
            np.array([r[1] for r in rows]),
            np.array([r[2] for r in rows]),
            qcount,
        ))
    result.wall_clock = time.perf_counter() - start
    return result


def range_bound(method: MethodSpec, r: int, d: int, priv: PrivacySpec, n: int) -> float:
    """Closed-form worst-case variance of a length-r range for ``method``.

    The consistent tree is charged (B + 1) V_F / 2 per touched level, with the
    level count ceil(log_B r) + 1 used for raw trees, times h for level sampling.
    """
    if method.kind == "flat":
        return r * variance_formula("oue", priv, n)
    if method.kind == "hh":
        return hh_variance_bound(method.b, r, d, priv, n)
    if method.kind == "hh_c":
        h = max(1, int_log_ceil(method.b, d))
        return (method.b + 1) / 2 * variance_formula("oue", priv, n) * h * (int_log_ceil(method.b, r) + 1)
    return haar_variance_bound(next_power_of_two(d), priv, n)


def predictor_table(d: int, b: int, priv: PrivacySpec, n: int, lengths=None) -> list[dict]:
    """Closed-form predictions side by side for a set of range lengths."""
    vf = variance_formula("oue", priv, n)
    lengths = lengths if lengths is not None else [1 << k for k in range(int(math.log2(d)) + 1)]
    rows = []
    for r in lengths:
        rows.append({
            "r": r,
            "flat": r * vf,
            "flat_avg": (d + 2) * vf / 3,
            "hh": hh_variance_bound(b, r, d, priv, n),
            "hh_consistent": post_ci_variance_bound(b, r, d, priv, n),
            "haar": haar_variance_bound(d, priv, n),
        })
    return rows


DECILES = tuple(round(0.1 * k, 1) for k in range(1, 10))


@dataclass(frozen=True)
class QuantileRow:
    center_fraction: float
    rep: int
    method: str
    phi: float
    true_value: int
    est_value: int
    value_error: float
    quantile_error: float


def run_quantiles(cfg: ExperimentConfig, centers=(0.1, 0.5), phis=DECILES) -> list[QuantileRow]:
    """Decile estimates for every method on Cauchy data centred at each fraction of the domain."""
    rows = []
    for center in centers:
        spec = DataSpec(cfg.d, cfg.n, center, cfg.height)
        for rep in range(cfg.reps):
            counts = sample_cauchy(spec, rngmod.stream(cfg.seed, "quantiles", center, rep, "data"))
            for m in cfg.methods:
                est = simulate_method(m, counts, cfg.priv,
                                      rngmod.stream(cfg.seed, "quantiles", center, rep, m.name), cfg.mode)
                pref = prefix_values(est)
                for phi in phis:
                    res = quantile(est, phi, counts, prefixes=pref)
                    rows.append(QuantileRow(center, rep, m.name, phi, true_quantile(counts, phi), res.index,
                                            res.value_error, res.quantile_error))
    return rows
