"""Command-line front end.

    hullbounds bound CONFIG [--out REPORT] [--no-timestamp] [--verbose]
    hullbounds sweep CONFIG --param s --from -2 --to 2 --steps 81 --out curve.csv

``bound`` writes a JSON report.  ``sweep`` re-solves the problem with one
constant swept over a range and writes one CSV row per value with the columns
``param,lower,upper,lower_ref,upper_ref,gap_lower,gap_upper,status``.

Exit codes: 0 success, 1 configuration error, 2 infeasible constraints,
3 constraint values on the boundary of the feasible set, 4 no convergence.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from typing import Any, Sequence

import numpy as np

from . import closed_forms as cf
from .config import Config, ConfigError, load_config
from .dual import BOUNDARY, INFEASIBLE, NONCONVERGENCE, BoundResult, ProblemError, solve_dual
from .expr import DomainError
from .model import LOWER, UPPER

__all__ = ["main", "run_bound", "run_sweep", "reference_values", "CSV_COLUMNS",
           "EXIT_OK", "EXIT_CONFIG", "EXIT_INFEASIBLE", "EXIT_BOUNDARY", "EXIT_NONCONVERGENCE"]

log = logging.getLogger("hullbounds")

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_BOUNDARY, EXIT_NONCONVERGENCE = 0, 1, 2, 3, 4
CSV_COLUMNS = ("param", "lower", "upper", "lower_ref", "upper_ref", "gap_lower", "gap_upper", "status")
SWEEP_DECIMALS = 12


# -- references ---------------------------------------------------------------

def _ref_value(v: Any, consts: dict) -> float:
    if isinstance(v, str):
        if v not in consts:
            raise ConfigError([f"reference: unknown constant {v!r}"])
        return consts[v]
    return float(v)


def reference_values(cfg: Config, **overrides: float) -> tuple[float | None, float | None]:
    """Closed-form ``(lower, upper)`` named by the config's ``reference``.

    Reference fields may be numbers or names of constants.  ``None`` marks a
    side without a closed form (or a parameter where the formula is undefined).
    For ``power_mean`` the values are for ``M_s = E[X^s]^(1/s)``; an absent
    upper bound is ``inf``.
    """
    ref = cfg.reference
    if not ref:
        return None, None
    consts = dict(cfg.constants)
    consts.update(overrides)
    get = lambda key, default=None: _ref_value(ref.get(key, default), consts)
    kind = ref["kind"]
    try:
        if kind in ("mgf", "power_mean"):
            lam, var, s = get("lam"), get("var"), get("param", "s")
            if kind == "mgf":
                return cf.mgf_bounds(lam, var, s)
            lo, hi = cf.power_mean_bounds(lam, var, s)
            return lo, (math.inf if hi is None else hi)
        if kind == "markov":
            return cf.markov_bound(get("lam"), get("a")), None
        if kind == "jarzynski":
            return None, cf.jarzynski_bound(get("a"), get("lam"))
        if kind == "variance":
            lam = get("lam")
            _, vmax = cf.variance_range(get("a"), get("b"), lam)
            return lam * lam, lam * lam + vmax
        if kind == "jensen":
            jb = cf.jensen_gap_bounds(cfg.problem().objective, get("a"), get("b"), get("lam"),
                                      get("var"), ref.get("derivative", "convex"))
            return jb.lower, jb.upper
    except (ValueError, ArithmeticError) as exc:
        log.info("no reference at %s: %s", overrides, exc)
        return None, None
    raise ConfigError([f"reference: unknown kind {kind!r}"])


def power_mean_transform(lower: float, upper: float, s: float) -> tuple[float, float]:
    """Map bounds on ``E[X^s]`` to bounds on ``E[X^s]^(1/s)``."""
    root = lambda v: 0.0 if (s < 0 and v == math.inf) else (math.inf if v == math.inf else v ** (1.0 / s))
    if s > 0:
        return root(lower), root(upper)
    return root(upper), root(lower)


# -- serialisation ------------------------------------------------------------

def _jsonable(v: Any) -> Any:
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.floating, float)):
        v = float(v)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def _feasibility_dict(rep) -> dict | None:
    if rep is None:
        return None
    return {"status": rep.status, "margin": rep.margin, "alpha": rep.alpha,
            "epsilon": rep.epsilon, "grid_size": rep.grid_size, "stage": rep.stage}


def _result_dict(r: BoundResult) -> dict:
    cert = r.certificate
    out = {
        "bound": r.bound,
        "status": r.status,
        "stage_bound": r.stage_bound,
        "extrapolated": r.extrapolated,
        "diverged": r.diverged,
        "certificate": None if cert is None else {
            "alpha": cert.alpha, "c": cert.c, "stage": cert.stage,
            "stage_bound": cert.bound, "active_points": cert.active_points},
        "measure": None if r.measure is None else {
            "atoms": r.measure.atoms, "weights": r.measure.weights},
        "check": None if r.check is None else {
            "bound_gap": r.check.bound_gap, "max_violation": r.check.max_violation,
            "max_hyperplane_residual": r.check.max_hyperplane_residual,
            "expectation": r.check.expectation},
        "oracle_value": r.stages[-1].oracle_value if r.stages else None,
        "oracle_gap": r.oracle_gap,
        "stages": [{"stage": s.stage, "feasibility": s.feasibility.status, "bound": s.bound,
                    "oracle_value": s.oracle_value, "alpha": s.alpha,
                    "iterations": s.iterations, "converged": s.converged} for s in r.stages],
        "diagnostics": list(r.diagnostics),
    }
    return out


def _exit_code(results: Sequence[BoundResult]) -> int:
    statuses = {r.status for r in results}
    if INFEASIBLE in statuses:
        return EXIT_INFEASIBLE
    if BOUNDARY in statuses:
        return EXIT_BOUNDARY
    if NONCONVERGENCE in statuses:
        return EXIT_NONCONVERGENCE
    return EXIT_OK


# -- commands -----------------------------------------------------------------

def _solve(cfg: Config, direction: str, **overrides: float) -> BoundResult:
    return solve_dual(cfg.problem(direction, **overrides), cfg.params, cfg.stages)


def run_bound(cfg: Config, timestamp: bool = True) -> tuple[dict, int]:
    """Solve every requested direction; returns the report and the exit code."""
    results, timing = {}, {}
    for d in cfg.directions:
        t0 = time.perf_counter()
        results[d] = _solve(cfg, d)
        timing[d] = time.perf_counter() - t0
        log.info("%s bound %r (%s) in %.2fs", d, results[d].bound, results[d].status, timing[d])
    first = results[cfg.directions[0]]
    lo_ref, hi_ref = reference_values(cfg)
    report = {
        "config": cfg.raw,
        "seed": cfg.seed,
        "feasibility": _feasibility_dict(first.feasibility),
        "bounds": {d: _result_dict(r) for d, r in results.items()},
        "reference": {"lower": lo_ref, "upper": hi_ref} if cfg.reference else None,
    }
    if timestamp:
        report["timing"] = timing
        report["timestamp"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    return _jsonable(report), _exit_code(list(results.values()))


def _sweep_row(cfg: Config, param: str, value: float) -> dict:
    over = {param: value}
    row = {"param": value, "lower": None, "upper": None}
    statuses = []
    for d in (LOWER, UPPER):
        try:
            r = _solve(cfg, d, **over)
        except (ProblemError, DomainError, ValueError, ArithmeticError) as exc:
            statuses.append(f"{d}:error:{exc}")
            continue
        row[d] = r.bound
        if r.status != "ok":
            statuses.append(f"{d}:{r.status}")
    lo_ref, hi_ref = reference_values(cfg, **over)
    if cfg.reference and cfg.reference.get("kind") == "power_mean":
        if value == 0:
            row["lower"] = row["upper"] = None
            statuses.append("power mean undefined at s=0")
        elif row["lower"] is not None and row["upper"] is not None:
            row["lower"], row["upper"] = power_mean_transform(row["lower"], row["upper"], value)
    row["lower_ref"], row["upper_ref"] = lo_ref, hi_ref
    for side in ("lower", "upper"):
        a, b = row[side], row[f"{side}_ref"]
        if a is None or b is None:
            gap = None
        elif math.isinf(a) or math.isinf(b):
            gap = 0.0 if a == b else math.inf
        else:
            gap = abs(a - b)
        row[f"gap_{side}"] = gap
    row["status"] = ";".join(statuses) if statuses else "ok"
    return row


def _sweep_row_star(args):
    return _sweep_row(*args)


def sweep_values(start: float, stop: float, steps: int) -> list[float]:
    """Evenly spaced values, rounded so that round numbers come out exact."""
    if steps < 1:
        raise ValueError("steps must be positive")
    vals = np.linspace(start, stop, steps) if steps > 1 else np.array([start])
    return [float(round(v, SWEEP_DECIMALS)) + 0.0 for v in vals]


def run_sweep(cfg: Config, param: str, values: Sequence[float], jobs: int = 1) -> list[dict]:
    """One row per value, in input order; rows may be computed in parallel."""
    if param not in cfg.constants:
        raise ConfigError([f"sweep: {param!r} is not a constant of the configuration"])
    args = [(cfg, param, float(v)) for v in values]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            return list(pool.map(_sweep_row_star, args))
    return [_sweep_row_star(a) for a in args]


def _csv_cell(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def rows_to_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for row in rows:
        w.writerow([_csv_cell(row[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


# -- entry point --------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hullbounds",
                                 description="Sharp bounds on expectations under moment constraints.")
    ap.add_argument("--verbose", "-v", action="store_true", help="log progress to standard error")
    sub = ap.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bound", help="solve one configuration and write a JSON report")
    b.add_argument("config")
    b.add_argument("--out", help="report path (default: standard output)")
    b.add_argument("--no-timestamp", action="store_true", help="omit timestamp and timings")
    b.add_argument("--verbose", "-v", action="store_true", default=argparse.SUPPRESS)

    s = sub.add_parser("sweep", help="sweep one constant and write a CSV curve")
    s.add_argument("config")
    s.add_argument("--param", required=True)
    s.add_argument("--from", dest="start", type=float, required=True)
    s.add_argument("--to", dest="stop", type=float, required=True)
    s.add_argument("--steps", type=int, default=81)
    s.add_argument("--out", help="CSV path (default: standard output)")
    s.add_argument("--jobs", type=int, default=1, help="rows solved in parallel")
    s.add_argument("--no-timestamp", action="store_true", help="accepted for symmetry; CSV has no timestamp")
    s.add_argument("--verbose", "-v", action="store_true", default=argparse.SUPPRESS)
    return ap


def _emit(text: str, path: str | None) -> None:
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config)
        if args.command == "bound":
            report, code = run_bound(cfg, timestamp=not args.no_timestamp)
            _emit(json.dumps(report, indent=2, sort_keys=True) + "\n", args.out)
            return code
        rows = run_sweep(cfg, args.param, sweep_values(args.start, args.stop, args.steps), args.jobs)
        _emit(rows_to_csv(rows), args.out)
        return EXIT_OK
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ProblemError as exc:
        for d in exc.diagnostics:
            print(f"config error: {d.code}: {d.message}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
