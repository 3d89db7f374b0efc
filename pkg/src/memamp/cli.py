"""Command-line front end.

Subcommands: ``run`` (one experiment), ``sweep`` (cartesian grid over
comma-separated flag values), ``moments`` (chi table dump) and
``demo-overflow``.  Exit codes: 0 success, 1 numerical failure, 2 usage
error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import itertools
import json
import math
import os
import sys

import numpy as np

from .errors import ConfigurationError
from .harness import (ExperimentConfig, config_hash, generate_problem, noise_variance,
                      overflow_demo, run_many)
from .operator import StructuredSpec, build_structured
from .spectral import chi_table_exact, chi_table_stochastic, naive_b_moments, theta0_for

SCHEMA_VERSION = 1
COLUMNS = ("iter", "matvecs", "mse_db", "v_pred_db", "damping_len", "flags", "time_ms")

# flag dest -> (ExperimentConfig field, parser)
PARAMS = {
    "algo": ("algorithm", str),
    "moments": ("moments", str),
    "m": ("m", int),
    "n": ("n", int),
    "kappa": ("kappa", float),
    "snr_db": ("snr_db", float),
    "mu": ("mu", float),
    "iters": ("T", int),
    "damping_len": ("L", int),
    "seed": ("seed", int),
    "field": ("field", str),
    "transform": ("transform", str),
    "probes": ("probes", int),
    "tau": ("tau", int),
    "eigs": ("eig_knowledge", str),
    "snr_convention": ("snr_convention", str),
}
REQUIRED = ("m", "n")


class UsageError(Exception):
    pass


def fmt(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return "%.17g" % v
    return str(v)


def _add_experiment_flags(p, sweep=False):
    kind = str if sweep else None

    def add(flag, typ, **kw):
        p.add_argument(flag, type=kind or typ, default=None, **kw)

    choices = (lambda c: {} if sweep else {"choices": c})
    add("--algo", str, **choices(["gd", "oa-eig", "oa-stoch", "cr"]))
    add("--moments", str, **choices(["naive", "scaled"]))
    add("--m", int)
    add("--n", int)
    add("--kappa", float)
    add("--snr-db", float)
    add("--mu", float)
    add("--iters", int)
    add("--damping-len", int)
    add("--seed", int)
    add("--field", str, **choices(["real", "complex"]))
    add("--transform", str, **choices(["dct", "dft", "dense"]))
    add("--probes", int)
    add("--tau", int)
    add("--eigs", str, help="eigenvalue knowledge: known | unknown", **choices(["known", "unknown"]))
    add("--snr-convention", str, **choices(["per-measurement", "unit"]))
    p.add_argument("--out", choices=["csv", "json"], default="csv")
    p.add_argument("--out-dir", default=None)
    p.add_argument("--config", default=None, help="JSON file of flag values (flags override)")
    p.add_argument("--timing", action="store_true", help="fill the time_ms column")


def build_parser():
    parser = argparse.ArgumentParser(prog="memamp", description="Memory AMP experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment")
    _add_experiment_flags(p_run)

    p_sweep = sub.add_parser("sweep", help="run a grid of experiments")
    _add_experiment_flags(p_sweep, sweep=True)
    p_sweep.add_argument("--jobs", type=int, default=1)

    for name in ("moments", "demo-overflow"):
        p = sub.add_parser(name, help="dump spectral moment tables" if name == "moments"
                           else "contrast naive and scaled moments")
        p.add_argument("--m", type=int, required=True)
        p.add_argument("--n", type=int, required=True)
        p.add_argument("--kappa", type=float, default=1000.0)
        p.add_argument("--snr-db", type=float, default=35.0)
        p.add_argument("--iters", type=int, default=100, help="T; tables cover k < 2T")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--snr-convention", choices=["per-measurement", "unit"],
                       default="per-measurement")
        p.add_argument("--out-dir", default=None)
        if name == "moments":
            p.add_argument("--field", choices=["real", "complex"], default="real")
            p.add_argument("--probes", type=int, default=1)
    return parser


def _load_config_file(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise OSError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError("config file must hold a JSON object")
    unknown = set(data) - set(PARAMS)
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    return data


def _merge(args):
    """Flag values over config-file values; returns dest -> raw value."""
    values = {}
    if args.config:
        values.update(_load_config_file(args.config))
    for dest in PARAMS:
        v = getattr(args, dest)
        if v is not None:
            values[dest] = v
    if "seed" not in values and os.environ.get("MAMP_SEED"):
        values["seed"] = os.environ["MAMP_SEED"]
    for dest in REQUIRED:
        if dest not in values:
            raise UsageError(f"--{dest.replace('_', '-')} is required")
    return values


def _experiment(values):
    kw = {}
    for dest, raw in values.items():
        name, typ = PARAMS[dest]
        try:
            kw[name] = typ(raw)
        except (TypeError, ValueError):
            raise UsageError(f"bad value for --{dest.replace('_', '-')}: {raw!r}") from None
    kw.setdefault("algorithm", "oa-eig")
    field, transform = kw.get("field"), kw.get("transform")
    if transform is None:
        kw["transform"] = "dft" if field == "complex" else "dct"
    if field is None:
        kw["field"] = "complex" if kw["transform"] == "dft" else "real"
    if kw["algorithm"] == "oa-stoch":
        kw.setdefault("eig_knowledge", "unknown")
    try:
        return ExperimentConfig(**kw)
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from None


def trajectory_rows(traj, timing=False):
    rows = []
    for rec in traj.records:
        rows.append([rec.iter, rec.matvecs_cumulative, rec.mse_db, rec.predicted_variance_db,
                     rec.damping_length_used, ";".join(rec.flags),
                     rec.time_ms if timing else ""])
    if traj.failed:
        rows.append([traj.failure_iter or len(traj.records) + 1,
                     traj.failure_matvecs if traj.failure_matvecs is not None else traj.setup_matvecs,
                     math.nan, math.nan, 0, f"numerical-failure:{traj.failure_reason}", ""])
    return rows


def render(traj, config, out="csv", timing=False):
    rows = trajectory_rows(traj, timing)
    if out == "json":
        def clean(v):
            if isinstance(v, float) and not math.isfinite(v):
                return None
            return v
        doc = {
            "schema_version": SCHEMA_VERSION,
            "config": config.to_dict(),
            "status": traj.status,
            "setup_matvecs": traj.setup_matvecs,
            "rows": [dict(zip(COLUMNS, map(clean, r))) for r in rows],
        }
        return json.dumps(doc, indent=1) + "\n"
    buf = io.StringIO()
    buf.write(f"# schema_version={SCHEMA_VERSION}\n")
    buf.write(f"# config={json.dumps(config.to_dict(), sort_keys=True)}\n")
    buf.write(f"# status={traj.status}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


def _write(text, out_dir, filename):
    if out_dir is None:
        sys.stdout.write(text)
        return None
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, filename)
    with open(path, "w") as fh:
        fh.write(text)
    return path


def cmd_run(args):
    config = _experiment(_merge(args))
    traj = run_many([config])[0]
    text = render(traj, config, args.out, args.timing)
    path = _write(text, args.out_dir, f"run-{config_hash(config)}.{args.out}")
    if path:
        print(path)
    return 1 if traj.failed else 0


def _split(raw):
    items = [s.strip() for s in str(raw).split(",")]
    return [s for s in items if s]


def cmd_sweep(args):
    base = {}
    if args.config:
        base.update(_load_config_file(args.config))
    grid = {}
    for dest in PARAMS:
        raw = getattr(args, dest)
        if raw is not None:
            vals = _split(raw)
            if not vals:
                raise UsageError(f"--{dest.replace('_', '-')} has an empty value list")
            grid[dest] = vals
        elif dest in base:
            v = base[dest]
            grid[dest] = [str(x) for x in v] if isinstance(v, list) else [v]
    if not grid:
        raise UsageError("empty sweep grid")
    if "seed" not in grid and os.environ.get("MAMP_SEED"):
        grid["seed"] = [os.environ["MAMP_SEED"]]
    for dest in REQUIRED:
        if dest not in grid:
            raise UsageError(f"--{dest.replace('_', '-')} is required")
    keys = list(grid)
    configs = [_experiment(dict(zip(keys, combo))) for combo in itertools.product(*(grid[k] for k in keys))]
    out_dir = args.out_dir or "sweep-out"
    trajs = run_many(configs, jobs=args.jobs)

    os.makedirs(out_dir, exist_ok=True)
    summary = io.StringIO()
    w = csv.writer(summary, lineterminator="\n")
    fields = [f.name for f in dataclasses.fields(ExperimentConfig)]
    w.writerow(["cell", "file"] + fields + ["status", "final_mse_db", "total_matvecs"])
    failed = 0
    for config, traj in zip(configs, trajs):
        h = config_hash(config)
        name = f"cell-{h}.{args.out}"
        with open(os.path.join(out_dir, name), "w") as fh:
            fh.write(render(traj, config, args.out, args.timing))
        total = traj.records[-1].matvecs_cumulative if traj.records else traj.setup_matvecs
        if traj.failed:
            failed += 1
            total = traj.failure_matvecs if traj.failure_matvecs is not None else total
        d = config.to_dict()
        w.writerow([h, name] + [fmt(d[f]) if d[f] is not None else "" for f in fields]
                   + [traj.status, fmt(traj.final_mse_db), total])
    with open(os.path.join(out_dir, "summary.csv"), "w") as fh:
        fh.write(summary.getvalue())
    print(os.path.join(out_dir, "summary.csv"))
    return 1 if failed else 0


def _seed(args):
    if args.seed is not None:
        return args.seed
    return int(os.environ.get("MAMP_SEED", 0))


def cmd_moments(args):
    transform = "dft" if args.field == "complex" else "dct"
    seed = _seed(args)
    spec = StructuredSpec(args.m, args.n, args.kappa, transform, seed)
    op = build_structured(spec)
    eigs = spec.eigenvalues()
    lam_dag = 0.5 * (eigs.max() + eigs.min())
    sigma2 = noise_variance(args.snr_db, args.m / args.n, args.snr_convention)
    theta0 = theta0_for(lam_dag, sigma2)
    horizon = 2 * args.iters
    exact = chi_table_exact(eigs, lam_dag, theta0, horizon, args.n)
    stoch = chi_table_stochastic(op, lam_dag, theta0, horizon, seed + 1, probes=args.probes,
                                 extremes=(exact.lambda_max, exact.lambda_min))
    b, _ = naive_b_moments(eigs, lam_dag, horizon, args.n)
    buf = io.StringIO()
    buf.write(f"# lambda_dag={fmt(lam_dag)} theta0={fmt(theta0)} delta={fmt(exact.delta)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k", "chi_exact", "chi_stochastic", "bound", "margin", "naive_b"])
    for k in range(horizon):
        w.writerow([k, fmt(exact.chi[k]), fmt(stoch.chi[k]), fmt(exact.bound),
                    fmt(exact.bound - abs(exact.chi[k])), fmt(b[k])])
    path = _write(buf.getvalue(), args.out_dir, f"moments-m{args.m}-n{args.n}-k{fmt(args.kappa)}.csv")
    if path:
        print(path)
    return 0


def cmd_demo_overflow(args):
    config = ExperimentConfig(m=args.m, n=args.n, kappa=args.kappa, snr_db=args.snr_db, T=args.iters,
                              snr_convention=args.snr_convention)
    rep = overflow_demo(config)
    buf = io.StringIO()
    for key in ("regime", "rho_B", "k_star", "chi_all_finite", "max_abs_chi", "bound", "min_margin"):
        v = rep[key]
        buf.write(f"# {key}={fmt(v) if v is not None else 'none'}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k", "naive_b", "chi_exact", "margin"])
    for k in range(rep["horizon"]):
        w.writerow([k, fmt(rep["b"][k]), fmt(rep["chi"][k]), fmt(rep["bound"] - abs(rep["chi"][k]))])
    path = _write(buf.getvalue(), args.out_dir, f"overflow-m{args.m}-n{args.n}-k{fmt(args.kappa)}.csv")
    if path:
        print(path)
    return 0


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "moments": cmd_moments,
            "demo-overflow": cmd_demo_overflow}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"memamp: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"memamp: I/O error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
