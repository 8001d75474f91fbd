"""Command-line runner: ``dcbo run`` and ``dcbo list``.

``run`` executes every (method, replicate) pair, writes one trace CSV per
pair and a ``summary.json`` scored from those CSVs, and prints a summary
table. Replicate ``r`` uses seed ``stable_hash(master, r)`` for every method,
so methods that coincide at the first slice produce identical rows there.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .acquisition import GRID_SIZES
from .experiments import EXPERIMENTS, builtin, list_experiments
from .graph import format_set, parse_set
from .metrics import ORACLE_MC, evaluate_trace, summarize
from .model import SCM_NOISE_VAR
from .optimizer import METHODS, MethodConfig, OptimizationError, SliceTrace, Trace, Trial, run
from .scm import stable_hash

logger = logging.getLogger(__name__)

OUTPUT_ENV = "DCBO_OUTPUT_DIR"
DEFAULT_OUTPUT = "dcbo-results"
TRACE_HEADER = ("replicate", "method", "t", "h", "set", "x", "y", "incumbent")


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending field."""


# -- trace files ----------------------------------------------------------------


def _num(v: float, digits: int) -> str:
    return format(float(v), f".{digits}g")


def format_trace(trace: Trace) -> str:
    """CSV text of ``trace``; ``x`` keeps 10 significant digits."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    for tr in trace.trials():
        w.writerow([
            trace.replicate, trace.method, tr.t, tr.h, format_set(tr.variables),
            ";".join(_num(v, 10) for v in tr.x), _num(tr.y, 17), _num(tr.incumbent, 17),
        ])
    return buf.getvalue()


def parse_trace(text: str) -> Trace:
    """Inverse of :func:`format_trace` (up to the rounding of ``x``)."""
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != TRACE_HEADER:
        raise ValueError(f"unexpected trace header {reader.fieldnames}")
    slices: dict[int, list] = {}
    method = replicate = None
    for row in reader:
        method, replicate = row["method"], int(row["replicate"])
        t = int(row["t"])
        slices.setdefault(t, []).append(Trial(
            t=t, h=int(row["h"]), variables=parse_set(row["set"]),
            x=tuple(float(v) for v in row["x"].split(";")),
            y=float(row["y"]), incumbent=float(row["incumbent"]),
        ))
    if method is None:
        raise ValueError("trace file has no rows")
    return Trace(method, replicate, [SliceTrace(t, slices[t]) for t in sorted(slices)])


def trace_filename(experiment: str, method: str, replicate: int) -> str:
    return f"trace_{experiment}_{method}_r{replicate:03d}.csv"


# -- configuration ------------------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    experiment: str
    methods: tuple = METHODS
    replicates: int = 10
    seed: int = 0
    H: int = 20
    n_obs: int | None = None
    n_mc: int = 200
    n_draws: int = 20
    query_mc: int = 1
    noise_var: float = 1.0
    scm_noise_var: float | None = SCM_NOISE_VAR
    grid_sizes: dict = field(default_factory=lambda: dict(GRID_SIZES))
    oracle_mc: int = ORACLE_MC
    out: Path = Path(DEFAULT_OUTPUT)
    workers: int = 1

    def validate(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(
                f"experiment: unknown name {self.experiment!r}; valid names: {', '.join(EXPERIMENTS)}"
            )
        if not self.methods:
            raise ConfigError("methods: at least one method is required")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"methods: unknown {bad}; valid methods: {', '.join(METHODS)}")
        checks = {
            "replicates": self.replicates >= 1,
            "H": self.H >= 1,
            "n_obs": self.n_obs is None or self.n_obs >= 1,
            "n_mc": self.n_mc >= 1,
            "n_draws": self.n_draws >= 1,
            "query_mc": self.query_mc >= 1,
            "noise_var": self.noise_var >= 0,
            "scm_noise_var": self.scm_noise_var is None or self.scm_noise_var > 0,
            "oracle_mc": self.oracle_mc >= 1,
            "workers": self.workers >= 1,
            "grid_sizes": all(v >= 1 for v in self.grid_sizes.values()),
        }
        for name, ok in checks.items():
            if not ok:
                raise ConfigError(f"{name}: invalid value {getattr(self, name)!r}")
        return self

    def method_config(self, method: str, replicate: int) -> MethodConfig:
        return MethodConfig(
            method=method, H=self.H, seed=stable_hash(self.seed, replicate), n_mc=self.n_mc,
            n_draws=self.n_draws, noise_var=self.noise_var, grid_sizes=dict(self.grid_sizes),
            n_obs=self.n_obs, query_mc=self.query_mc, scm_noise_var=self.scm_noise_var,
        )


# -- execution -------------------------------------------------------------------------


def _job(cfg: RunConfig, method: str, replicate: int):
    experiment = builtin(cfg.experiment)
    try:
        trace = run(experiment, cfg.method_config(method, replicate), replicate)
    except OptimizationError as exc:
        raise OptimizationError(f"{method} replicate {replicate}: {exc}") from exc
    text = format_trace(trace)
    scores = evaluate_trace(experiment, parse_trace(text), n_mc=cfg.oracle_mc,
                            grid_sizes=cfg.grid_sizes)
    return method, replicate, text, scores


def execute(cfg: RunConfig) -> dict:
    """Run all jobs, write traces and the summary, return the summary."""
    cfg.validate()
    cfg.out.mkdir(parents=True, exist_ok=True)
    jobs = [(m, r) for m in cfg.methods for r in range(cfg.replicates)]
    if cfg.workers == 1:
        results = [_job(cfg, m, r) for m, r in jobs]
    else:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [pool.submit(_job, cfg, m, r) for m, r in jobs]
            results = [f.result() for f in futures]
    scores: dict = {m: [None] * cfg.replicates for m in cfg.methods}
    for method, replicate, text, rep_scores in results:
        path = cfg.out / trace_filename(cfg.experiment, method, replicate)
        path.write_text(text)
        scores[method][replicate] = rep_scores
    summary = summarize(scores)
    (cfg.out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def summarize_directory(experiment: str, directory, oracle_mc: int = ORACLE_MC,
                        grid_sizes=GRID_SIZES) -> dict:
    """Re-score trace files found in ``directory`` for ``experiment``."""
    exp = builtin(experiment)
    scores: dict = {}
    for path in sorted(Path(directory).glob(f"trace_{experiment}_*.csv")):
        trace = parse_trace(path.read_text())
        scores.setdefault(trace.method, {})[trace.replicate] = evaluate_trace(
            exp, trace, n_mc=oracle_mc, grid_sizes=grid_sizes)
    return summarize({m: [reps[r] for r in sorted(reps)] for m, reps in scores.items()})


def format_summary(summary: dict) -> str:
    lines = [f"{'method':<8}{'gap':>8}{'stderr':>9}{'%set':>8}"]
    for method, row in summary.items():
        lines.append(f"{method:<8}{row['gap_mean']:>8.3f}{row['gap_stderr']:>9.3f}"
                     f"{row['optimal_set_pct']:>8.1f}")
    return "\n".join(lines)


def format_experiments(rows) -> str:
    lines = [f"{'name':<9}{'T':>3}  {'N':<20}{'stationary':<12}domains"]
    for r in rows:
        doms = ", ".join(f"{v}[{lo:g},{hi:g}]" for v, (lo, hi) in r["domains"].items())
        n = ",".join(str(v) for v in r["N"])
        lines.append(f"{r['name']:<9}{r['T']:>3}  {n:<20}{str(r['stationary']):<12}{doms}")
    return "\n".join(lines)


# -- argument parsing -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dcbo", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run methods on a builtin experiment")
    r.add_argument("--experiment", required=True, help=f"one of {', '.join(EXPERIMENTS)}")
    r.add_argument("--methods", default=",".join(METHODS), help="comma-separated list")
    r.add_argument("--replicates", type=int, default=10)
    r.add_argument("--seed", type=int, default=0, help="master seed")
    r.add_argument("--H", type=int, default=20, help="explorative trials per slice")
    r.add_argument("--n-obs", type=int, default=None, help="observational samples per slice")
    r.add_argument("--n-mc", type=int, default=200, help="exogenous draws per prior evaluation")
    r.add_argument("--n-draws", type=int, default=20, help="function draws for the prior spread")
    r.add_argument("--query-mc", type=int, default=1,
                   help="outcomes averaged per query (1 = single noisy draw)")
    r.add_argument("--noise-var", type=float, default=1.0, help="surrogate noise variance")
    r.add_argument("--scm-noise-var", default=str(SCM_NOISE_VAR),
                   help="noise variance of the fitted causal model; 'auto' selects it by "
                        "marginal likelihood")
    r.add_argument("--grid", type=int, nargs=3, metavar=("D1", "D2", "D3"),
                   default=[GRID_SIZES[1], GRID_SIZES[2], GRID_SIZES[3]],
                   help="grid points per axis for 1-, 2- and 3-variable sets")
    r.add_argument("--oracle-mc", type=int, default=ORACLE_MC)
    r.add_argument("--out", type=Path, default=None,
                   help=f"output directory (default ${OUTPUT_ENV} or {DEFAULT_OUTPUT})")
    r.add_argument("--workers", type=int, default=os.cpu_count() or 1)

    ls = sub.add_parser("list", help="list builtin experiments")
    ls.add_argument("--json", action="store_true", help="print JSON instead of a table")
    return p


def _scm_noise(text: str) -> float | None:
    if text.strip().lower() == "auto":
        return None
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"scm_noise_var: expected a number or 'auto', got {text!r}") from None


def config_from_args(args) -> RunConfig:
    out = args.out or Path(os.environ.get(OUTPUT_ENV, DEFAULT_OUTPUT))
    methods = tuple(m.strip().lower() for m in args.methods.split(",") if m.strip())
    return RunConfig(
        experiment=args.experiment.lower(), methods=methods, replicates=args.replicates,
        seed=args.seed, H=args.H, n_obs=args.n_obs, n_mc=args.n_mc, n_draws=args.n_draws,
        query_mc=args.query_mc, noise_var=args.noise_var,
        scm_noise_var=_scm_noise(args.scm_noise_var),
        grid_sizes={1: args.grid[0], 2: args.grid[1], 3: args.grid[2]},
        oracle_mc=args.oracle_mc, out=out, workers=args.workers,
    )


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "list":
        rows = list_experiments()
        print(json.dumps(rows, indent=2) if args.json else format_experiments(rows))
        return 0
    try:
        cfg = config_from_args(args).validate()
    except ConfigError as exc:
        print(f"dcbo run: invalid config: {exc}", file=sys.stderr)
        return 2
    try:
        summary = execute(cfg)
    except OptimizationError as exc:
        print(f"dcbo run: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"dcbo run: cannot write output: {exc}", file=sys.stderr)
        return 1
    print(format_summary(summary))
    print(f"wrote {len(cfg.methods) * cfg.replicates} trace files and summary.json to {cfg.out}")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
