"""Command-line front end: experiments, sweeps, quantiles and debugging utilities.

Exit codes: 0 success, 2 usage error, 3 capacity error, 4 failed ``--assert`` check.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys

from .errors import CapacityError, LdpRangeError
from .freq_oracle import MECHANISMS, PrivacySpec, ldp_ratio_check
from .harness import (
    ExperimentConfig,
    parse_method,
    range_bound,
    run_experiment,
    run_quantiles,
)
from .hierarchy import TreeLayout, b_adic_decompose

EXIT_OK, EXIT_USAGE, EXIT_CAPACITY, EXIT_ASSERT = 0, 2, 3, 4
EPS_GRID = (0.2, 0.4, 0.6, 0.8, 1.0, 1.1, 1.2, 1.4)
OUTPUT_DIR_ENV = "LDPRANGE_OUTPUT_DIR"
RATIO_TOL = 1e-9

DEFAULTS = {
    "d_exp": 8,
    "eps": "1.1",
    "methods": "hh_c:4,haar",
    "n_exp": 20,
    "n": None,
    "P": 0.4,
    "height": None,
    "stride": 1,
    "reps": 5,
    "seed": 0,
    "mode": "fast",
    "jobs": 1,
}


class UsageError(Exception):
    pass


def _fmt(x) -> str:
    if isinstance(x, float):
        return "nan" if math.isnan(x) else format(x, ".12g")
    return str(x)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value file; command-line flags take precedence")
    p.add_argument("--d-exp", dest="d_exp", type=int, help="domain size is 2^d_exp")
    p.add_argument("--eps", help="privacy parameter(s), comma separated")
    p.add_argument("--methods", help="comma list of flat, hh:B, hh_c:B, haar (optional @oue|@olh|@hrr)")
    p.add_argument("--branching", help="comma list of B; expands bare hh / hh_c entries")
    p.add_argument("--n-exp", dest="n_exp", type=int, help="population is 2^n_exp")
    p.add_argument("--n", type=int, help="exact population (overrides --n-exp)")
    p.add_argument("--P", dest="P", type=float, help="Cauchy centre as a fraction of the domain")
    p.add_argument("--height", type=float, help="Cauchy scale (default D/10)")
    p.add_argument("--stride", type=int, help="distance between query start points (1 = all ranges)")
    p.add_argument("--reps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=("fast", "per_user"))
    p.add_argument("--jobs", type=int, help="parallel repetitions")
    p.add_argument("--out", help="output CSV path (default stdout, or $%s/<command>.csv)" % OUTPUT_DIR_ENV)
    p.add_argument("--assert", dest="check", action="store_true",
                   help="exit 4 unless the run passes its built-in checks")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ldprange", description="Range queries under local differential privacy")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [("simulate", "per-length MSE of each method"),
                            ("sweep", "simulate over a grid of epsilon values"),
                            ("quantiles", "decile estimates on two Cauchy centres")]:
        _common(sub.add_parser(name, help=help_text))

    dec = sub.add_parser("decompose", help="show the B-adic cover of a range")
    dec.add_argument("a", type=int)
    dec.add_argument("b", type=int)
    dec.add_argument("--d", type=int, required=True, help="domain size")
    dec.add_argument("--branching", type=int, default=2)
    dec.add_argument("--json", action="store_true", help="print only the JSON listing")

    priv = sub.add_parser("privacy-check", help="exact worst-case likelihood ratio of a mechanism")
    priv.add_argument("--mechanism", choices=MECHANISMS, required=True)
    priv.add_argument("--d", type=int, help="domain size (default 2 for rr1, else 8)")
    priv.add_argument("--eps", required=True, help="privacy parameter(s), comma separated")
    priv.add_argument("--assert", dest="check", action="store_true")
    return parser


def read_config_file(path: str) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key = key.strip().replace("-", "_")
            if key not in DEFAULTS and key != "branching":
                raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = value.strip()
    return out


def resolve(args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags."""
    conf = dict(DEFAULTS, branching=None)
    if args.command == "sweep":
        conf["eps"] = ",".join(str(e) for e in EPS_GRID)
    if args.config:
        conf.update(read_config_file(args.config))
    for key in conf:
        val = getattr(args, key, None)
        if val is not None:
            conf[key] = val
    return conf


def _floats(text) -> list[float]:
    try:
        vals = [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"bad number list {text!r}") from None
    if not vals:
        raise UsageError("empty epsilon list")
    return vals


def _methods(conf) -> tuple:
    names = [m.strip() for m in str(conf["methods"]).split(",") if m.strip()]
    if not names:
        raise UsageError("empty method list")
    branching = [int(x) for x in str(conf["branching"]).split(",")] if conf["branching"] else None
    out = []
    for name in names:
        body, at, oracle = name.partition("@")
        if body in ("hh", "hh_c"):
            if not branching:
                raise UsageError(f"{body} without a branching factor needs --branching")
            out.extend(parse_method(f"{body}:{b}{at}{oracle}") for b in branching)
        else:
            out.append(parse_method(name))
    return tuple(dict.fromkeys(out))


def _to_int(conf, key):
    try:
        return None if conf[key] in (None, "", "None") else int(conf[key])
    except ValueError:
        raise UsageError(f"{key} must be an integer") from None


def _to_float(conf, key):
    try:
        return None if conf[key] in (None, "", "None") else float(conf[key])
    except ValueError:
        raise UsageError(f"{key} must be a number") from None


def make_config(conf: dict, epsilon: float) -> ExperimentConfig:
    d_exp, n_exp, n = _to_int(conf, "d_exp"), _to_int(conf, "n_exp"), _to_int(conf, "n")
    if d_exp is None or d_exp < 1 or d_exp > 30:
        raise UsageError("--d-exp must be between 1 and 30")
    if n is None:
        if n_exp is None or n_exp < 0 or n_exp > 40:
            raise UsageError("--n-exp must be between 0 and 40")
        n = 1 << n_exp
    return ExperimentConfig(
        d=1 << d_exp, epsilon=epsilon, n=n, methods=_methods(conf),
        center_fraction=_to_float(conf, "P"), height=_to_float(conf, "height"),
        stride=_to_int(conf, "stride"), reps=_to_int(conf, "reps"), seed=_to_int(conf, "seed"),
        mode=str(conf["mode"]), jobs=_to_int(conf, "jobs"),
    )


def _header(command: str, conf: dict) -> list[str]:
    lines = [f"# command={command}"]
    for key in sorted(conf):
        if key != "jobs":
            lines.append(f"# {key}={conf[key]}")
    return lines


def _emit(command: str, text: str, out: str | None) -> None:
    path = out
    if path is None and os.environ.get(OUTPUT_DIR_ENV):
        path = os.path.join(os.environ[OUTPUT_DIR_ENV], f"{command}.csv")
    if path is None:
        sys.stdout.write(text)
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


SIM_COLUMNS = ["method", "B", "D", "epsilon", "N", "range_length", "mse", "stddev", "seed"]


def _simulate_rows(cfg: ExperimentConfig):
    """CSV rows plus the list of failed checks for one configuration."""
    res = run_experiment(cfg)
    rows, failures = [], []
    priv = cfg.priv
    for mres in res.methods:
        m = mres.method
        base = [m.name, m.b if m.b is not None else "", cfg.d, _fmt(float(cfg.epsilon)), cfg.n]
        mean, std = mres.mean_by_length, mres.std_by_length
        for r in range(1, cfg.d + 1):
            if mres.query_counts[r] == 0:
                continue
            rows.append(base + [r, _fmt(float(mean[r])), _fmt(float(std[r])), cfg.seed])
            if m.kind != "flat" and mean[r] > range_bound(m, r, cfg.d, priv, cfg.n):
                failures.append(f"{m.name} length {r} exceeds its bound")
        rows.append(base + ["all", _fmt(mres.mean_overall), _fmt(mres.std_overall), cfg.seed])
        rows.append(base + ["prefix", _fmt(mres.mean_prefix), _fmt(float(_std1(mres.prefix))), cfg.seed])
    for mres in res.methods:
        if mres.method.kind == "hh_c":
            try:
                raw = res.method(mres.method.simulation_key)
            except KeyError:
                continue
            if mres.mean_overall > raw.mean_overall:
                failures.append(f"{mres.method.name} is worse than {raw.method.name}")
    return rows, failures


def _std1(x):
    return x.std(ddof=1) if x.size > 1 else 0.0


def _csv_text(header_lines, columns, rows) -> str:
    buf = io.StringIO()
    buf.write("\n".join(header_lines) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    writer.writerows(rows)
    return buf.getvalue()


def cmd_simulate(args, conf) -> int:
    return _run_grid(args, conf, "simulate")


def cmd_sweep(args, conf) -> int:
    return _run_grid(args, conf, "sweep")


def _run_grid(args, conf, command) -> int:
    rows, failures = [], []
    for eps in _floats(conf["eps"]):
        r, f = _simulate_rows(make_config(conf, eps))
        rows.extend(r)
        failures.extend(f)
    _emit(command, _csv_text(_header(command, conf), SIM_COLUMNS, rows), args.out)
    return _report_failures(args, failures)


def _report_failures(args, failures) -> int:
    if args.check and failures:
        for f in failures:
            print(f"check failed: {f}", file=sys.stderr)
        return EXIT_ASSERT
    return EXIT_OK


QUANTILE_COLUMNS = ["P", "rep", "method", "phi", "true_value", "est_value", "value_error", "quantile_error"]


def cmd_quantiles(args, conf) -> int:
    rows, failures = [], []
    for eps in _floats(conf["eps"]):
        cfg = make_config(conf, eps)
        for q in run_quantiles(cfg):
            rows.append([_fmt(q.center_fraction), q.rep, q.method, _fmt(q.phi), q.true_value, q.est_value,
                         _fmt(q.value_error), _fmt(q.quantile_error)])
            if q.quantile_error > 0.01:
                failures.append(f"{q.method} P={q.center_fraction} phi={q.phi} quantile error "
                                f"{q.quantile_error:.4f} > 0.01")
    _emit("quantiles", _csv_text(_header("quantiles", conf), QUANTILE_COLUMNS, rows), args.out)
    return _report_failures(args, failures)


def cmd_decompose(args) -> int:
    if args.d < 1:
        raise UsageError("--d must be positive")
    layout = TreeLayout.for_domain(args.d, args.branching)
    if not 0 <= args.a <= args.b < args.d:
        raise UsageError(f"range [{args.a}, {args.b}] is not inside [0, {args.d})")
    cover = b_adic_decompose(args.a, args.b, layout)
    listing = [{"level": c.level, "node": c.index, "leaf_lo": c.lo, "leaf_hi": c.hi} for c in cover]
    if not args.json:
        print(f"[{args.a}, {args.b}] over D={args.d}, B={args.branching}: {len(cover)} nodes")
        for c in cover:
            print(f"  level {c.level} node {c.index}: [{c.lo}, {c.hi}]")
    print(json.dumps(listing))
    return EXIT_OK


def cmd_privacy_check(args) -> int:
    status = EXIT_OK
    d = args.d if args.d is not None else (2 if args.mechanism == "rr1" else 8)
    for eps in _floats(args.eps):
        priv = PrivacySpec(eps)
        ratio = ldp_ratio_check(args.mechanism, d, priv)
        ok = ratio <= priv.e_eps * (1 + RATIO_TOL)
        print(f"mechanism={args.mechanism} d={d} eps={_fmt(eps)} ratio={ratio:.6f} "
              f"e^eps={priv.e_eps:.6f} {'PASS' if ok else 'FAIL'}")
        if not ok and args.check:
            status = EXIT_ASSERT
    return status


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "decompose":
            return cmd_decompose(args)
        if args.command == "privacy-check":
            return cmd_privacy_check(args)
        conf = resolve(args)
        return {"simulate": cmd_simulate, "sweep": cmd_sweep, "quantiles": cmd_quantiles}[args.command](args, conf)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CapacityError as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except (LdpRangeError, ValueError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
