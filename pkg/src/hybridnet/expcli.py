"""Seeded multi-run sweeps and the ``hybridnet`` command line.

Experiments and the curve each produces (one CSV per run):

    phase            eta(rho), T(rho)          lattice, n=1000
    dbrs_sweep       rho_c(P)                  rewired backbone regenerated per run
    degree_load      sigma_L(P) and P(k)       at fixed rho (0.3)
    speed_sweep      rho_c(v)
    users_sweep      rho_c(n), n*rho_c(n)
    routing_compare  eta(rho) per routing strategy

Run ``r`` of every sweep value uses seed ``seed_base + r``.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .capacity import find_rho_c, rho_c_upper_bound
from .topology import InvalidParameterError, degree_distribution
from .traffic import STRATEGIES, SimConfig, backbone_for, run_sim

EXPERIMENTS = ("phase", "dbrs_sweep", "degree_load", "speed_sweep", "users_sweep", "routing_compare")

# which SimConfig field each experiment sweeps, and its CSV column name
SWEPT = {
    "phase": ("rho", "rho"),
    "dbrs_sweep": ("P", "P"),
    "degree_load": ("P", "P"),
    "speed_sweep": ("v", "v"),
    "users_sweep": ("n", "n"),
    "routing_compare": ("rho", "rho"),
}


class UsageError(ValueError):
    pass


@dataclass
class BisectionSettings:
    runs_per_probe: int = 10
    threshold: float = 1.0
    tol: float = 0.002
    initial: float = 0.1
    aggregate: str = "median"
    rel_tol: float = 0.0

    def __post_init__(self):
        if self.runs_per_probe < 1 or self.threshold <= 0 or self.tol <= 0 or self.rel_tol < 0:
            raise UsageError("need runs_per_probe >= 1, threshold > 0, tol > 0, rel_tol >= 0")


@dataclass
class SweepSpec:
    experiment: str
    base: SimConfig
    sweep_values: list
    runs: int = 50
    seed_base: int = 0
    bisection: BisectionSettings = field(default_factory=BisectionSettings)
    strategies: tuple = STRATEGIES
    jobs: int = 1

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise UsageError(f"unknown experiment {self.experiment!r}; choose from {', '.join(EXPERIMENTS)}")
        if not self.sweep_values:
            raise UsageError("sweep values must be non-empty")
        if any(b <= a for a, b in zip(self.sweep_values, self.sweep_values[1:])):
            raise UsageError("sweep values must be strictly increasing")
        if self.runs < 1:
            raise UsageError("runs must be >= 1")
        if self.jobs < 1:
            raise UsageError("jobs must be >= 1")


@dataclass(frozen=True)
class SweepRecord:
    param_value: float
    metric_name: str
    mean: float
    stderr: float
    runs: int
    series: str = ""


@dataclass(frozen=True)
class RunValue:
    param_value: float
    series: str
    seed: int
    metric: str
    value: float


def _rho_c(cfg: SimConfig, bis: BisectionSettings) -> float:
    res = find_rho_c(cfg, bis.runs_per_probe, bis.threshold, bis.tol, bis.initial,
                     rho_max=rho_c_upper_bound(cfg), aggregate=bis.aggregate, rel_tol=bis.rel_tol)
    return res.rho_c


def _task(args):
    experiment, cfg, series, bis = args
    if experiment in ("phase", "routing_compare"):
        r = run_sim(cfg)
        out = {"eta": r.eta}
        if experiment == "phase":
            out["T"] = r.T
        return out
    if experiment == "degree_load":
        r = run_sim(cfg)
        out = {"sigma_L": r.sigma_L}
        for k, pk in degree_distribution(backbone_for(cfg)).items():
            out[f"P_k:{k}"] = pk
        return out
    rc = _rho_c(cfg, bis)
    out = {"rho_c": rc}
    if experiment == "users_sweep":
        out["n_rho_c"] = cfg.n * rc
    return out


def _cast(field_name: str, value):
    return int(value) if field_name == "n" else float(value)


def run_values(spec: SweepSpec) -> list:
    """Every per-run metric value, ordered by (sweep value, series, seed)."""
    field_name, _ = SWEPT[spec.experiment]
    series_list = spec.strategies if spec.experiment == "routing_compare" else ("",)
    tasks, keys = [], []
    for value in spec.sweep_values:
        for series in series_list:
            for r in range(spec.runs):
                seed = spec.seed_base + r
                kw = {field_name: _cast(field_name, value), "seed": seed}
                if series:
                    kw["strategy"] = series
                tasks.append((spec.experiment, spec.base.with_(**kw), series, spec.bisection))
                keys.append((value, series, seed))
    if spec.jobs > 1:
        with ProcessPoolExecutor(spec.jobs) as pool:
            results = list(pool.map(_task, tasks))
    else:
        results = [_task(t) for t in tasks]
    out = []
    for (value, series, seed), res in zip(keys, results):
        for metric, v in res.items():
            if metric.startswith("P_k:"):
                out.append(RunValue(value, metric.split(":")[1], seed, "P_k", v))
            else:
                out.append(RunValue(value, series, seed, metric, v))
    return out


def aggregate(values: list, runs: int) -> list:
    groups: dict = {}
    for rv in values:
        groups.setdefault((rv.param_value, rv.metric, rv.series), []).append(rv.value)
    records = []
    for (value, metric, series), xs in groups.items():
        if metric == "P_k":
            xs = xs + [0.0] * (runs - len(xs))  # degree absent in some runs
        arr = np.asarray(xs, dtype=float)
        stderr = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0
        records.append(SweepRecord(value, metric, float(arr.mean()), stderr, int(arr.size), series))
    return records


def run_sweep(spec: SweepSpec) -> list:
    return aggregate(run_values(spec), spec.runs)


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _lookup(records):
    return {(r.param_value, r.metric_name, r.series): r for r in records}


def format_csv(spec: SweepSpec, records: list) -> str:
    """Main table for an experiment: one row per sweep value."""
    _, column = SWEPT[spec.experiment]
    if spec.experiment == "phase":
        metrics = [("eta", ""), ("T", "")]
    elif spec.experiment == "routing_compare":
        metrics = [("eta", s) for s in spec.strategies]
    elif spec.experiment == "degree_load":
        metrics = [("sigma_L", "")]
    elif spec.experiment == "users_sweep":
        metrics = [("rho_c", ""), ("n_rho_c", "")]
    else:
        metrics = [("rho_c", "")]
    header = [column]
    for m, s in metrics:
        name = f"{m}_{s}" if s else m
        header += [f"{name}_mean", f"{name}_stderr"]
    table = _lookup(records)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for value in spec.sweep_values:
        row = [_fmt(_cast(SWEPT[spec.experiment][0], value))]
        for m, s in metrics:
            rec = table[(value, m, s)]
            row += [_fmt(rec.mean), _fmt(rec.stderr)]
        w.writerow(row)
    return buf.getvalue()


def format_degree_csv(spec: SweepSpec, records: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["P", "k", "P_k_mean", "P_k_stderr"])
    rows = sorted((r.param_value, int(r.series), r) for r in records if r.metric_name == "P_k")
    for value, k, rec in rows:
        w.writerow([_fmt(float(value)), k, _fmt(rec.mean), _fmt(rec.stderr)])
    return buf.getvalue()


def format_runs_csv(values: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["param_value", "series", "seed", "metric", "value"])
    for rv in values:
        w.writerow([_fmt(rv.param_value), rv.series, rv.seed, rv.metric, _fmt(rv.value)])
    return buf.getvalue()


# ---------------------------------------------------------------- command line

DEFAULT_GRIDS = {
    "phase": "0.05:0.05:0.5",
    "routing_compare": "0.5:0.25:4",
    "dbrs_sweep": "0:0.05:1",
    "degree_load": "0:0.05:1",
    "speed_sweep": "0,0.05,0.1,0.2,0.3,0.5,1",
    "users_sweep": "50,100,200,400,800",
}

# paper operating points per experiment when a flag is not given
EXPERIMENT_DEFAULTS = {
    "phase": dict(users=1000, p=0.0),
    "dbrs_sweep": dict(users=100),
    "degree_load": dict(users=100, rho=0.3),
    "speed_sweep": dict(users=100, p=0.25),
    "users_sweep": dict(p=0.25),
    "routing_compare": dict(users=100, p=0.25),
}

GRID_FLAG = {"rho": "rho_grid", "P": "p_grid", "v": "v_grid", "n": "n_grid"}


def parse_grid(text: str, integer: bool = False) -> list:
    """``lo:step:hi`` (inclusive) or a comma-separated list."""
    text = text.strip()
    try:
        if ":" in text:
            lo, step, hi = (float(x) for x in text.split(":"))
            if step <= 0 or hi < lo:
                raise UsageError(f"bad grid {text!r}")
            count = int(math.floor((hi - lo) / step + 1e-9)) + 1
            vals = [round(lo + k * step, 12) for k in range(count)]
        else:
            vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"bad grid {text!r}") from exc
    if integer:
        if any(v != int(v) for v in vals):
            raise UsageError(f"grid {text!r} must hold integers")
        vals = [int(v) for v in vals]
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hybridnet", description="Traffic capacity sweeps on hybrid networks.")
    p.add_argument("--experiment", choices=EXPERIMENTS)
    p.add_argument("--edge", type=int, default=32, help="stations per lattice side")
    p.add_argument("--users", type=int, help="number of mobile users n")
    p.add_argument("--speed", type=float, default=0.3, help="user speed v")
    p.add_argument("--capacity", type=int, default=10, help="packets a station handles per step (C)")
    p.add_argument("--rho", type=float, help="packet generation rate per user")
    p.add_argument("--rho-grid")
    p.add_argument("--p", type=float, help="DBRS rewiring probability")
    p.add_argument("--p-grid")
    p.add_argument("--v-grid")
    p.add_argument("--n-grid")
    p.add_argument("--strategy", choices=STRATEGIES, default="random")
    p.add_argument("--runs", type=int, default=50)
    p.add_argument("--runs-per-probe", type=int, default=10)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--warmup", type=int, default=1000)
    p.add_argument("--measure", type=int, default=5000)
    p.add_argument("--threshold", type=float, default=1.0)
    p.add_argument("--tol", type=float, default=0.002, help="absolute bisection bracket width")
    p.add_argument("--rel-tol", type=float, default=0.0, help="relative bisection bracket width")
    p.add_argument("--out", help="CSV path (stdout if omitted)")
    p.add_argument("--dump-runs", help="write per-run values to this CSV")
    p.add_argument("--config", help="key = value file; flags override it")
    return p


def read_config(path) -> dict:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.lstrip("-").replace("-", "_")] = value
    return out


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    first = parser.parse_args(argv)
    if first.config:
        try:
            conf = read_config(first.config)
        except UsageError as exc:
            parser.error(str(exc))
        known = {a.dest: a for a in parser._actions}
        defaults = {}
        for key, raw in conf.items():
            if key not in known or key in ("config", "help"):
                parser.error(f"unknown config key {key!r}")
            action = known[key]
            try:
                value = action.type(raw) if action.type else raw
            except ValueError:
                parser.error(f"bad value for {key}: {raw!r}")
            if action.choices and value not in action.choices:
                parser.error(f"bad value for {key}: {raw!r}")
            defaults[key] = value
        parser.set_defaults(**defaults)
        first = parser.parse_args(argv)
    if not first.experiment:
        parser.error("--experiment is required")
    return first


def spec_from_args(args) -> SweepSpec:
    exp = args.experiment
    defaults = EXPERIMENT_DEFAULTS[exp]
    users = args.users if args.users is not None else defaults.get("users", 100)
    rho = args.rho if args.rho is not None else defaults.get("rho", 0.1)
    p = args.p if args.p is not None else defaults.get("p", 0.0)
    field_name, _ = SWEPT[exp]
    grid_text = getattr(args, GRID_FLAG[field_name]) or DEFAULT_GRIDS[exp]
    values = parse_grid(grid_text, integer=field_name == "n")
    base = SimConfig(edge_len=args.edge, n=users if field_name != "n" else max(values[0], 2),
                     v=args.speed, rho=rho, C=args.capacity, P=p, strategy=args.strategy,
                     seed=args.seed, warmup_steps=args.warmup, measure_steps=args.measure)
    return SweepSpec(exp, base, values, runs=args.runs, seed_base=args.seed,
                     bisection=BisectionSettings(args.runs_per_probe, args.threshold, args.tol,
                                                 rel_tol=args.rel_tol),
                     jobs=args.jobs)


def _write(path: Optional[str], text: str) -> None:
    if path is None:
        sys.stdout.write(text)
        return
    with open(path, "w", newline="") as fh:
        fh.write(text)


def cli_main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except OSError as exc:
        print(f"hybridnet: cannot read config: {exc}", file=sys.stderr)
        return 1
    try:
        spec = spec_from_args(args)
    except (UsageError, InvalidParameterError) as exc:
        print(f"hybridnet: error: {exc}", file=sys.stderr)
        return 2
    start = time.perf_counter()
    try:
        values = run_values(spec)
        records = aggregate(values, spec.runs)
        _write(args.out, format_csv(spec, records))
        if spec.experiment == "degree_load":
            out = Path(args.out) if args.out else Path("degree_load.csv")
            _write(str(out.with_name(out.stem + "_degree.csv")), format_degree_csv(spec, records))
        if args.dump_runs:
            _write(args.dump_runs, format_runs_csv(values))
    except OSError as exc:
        print(f"hybridnet: I/O error: {exc}", file=sys.stderr)
        return 1
    summary = (f"{spec.experiment}: {len(spec.sweep_values)} values x {spec.runs} runs"
               f" -> {args.out or 'stdout'} ({time.perf_counter() - start:.1f} s)")
    print(summary, file=sys.stderr if args.out is None else sys.stdout)
    return 0


def main() -> None:
    sys.exit(cli_main())
