"""JSON problem configurations.

A configuration is one JSON object::

    {
      "dim": 1,
      "support": {"type": "box", "lower": [0], "upper": ["inf"],
                  "schedule": {"base_radius": 1, "growth": 2, "max_stages": 11,
                               "exclusions": [{"at": 2, "side": "right"}]}},
      "constraints": [{"f": "x1", "phi": 1}],
      "objective": "step(2 - x1)",
      "direction": "lower",
      "constants": {},
      "solver": {"grid_res": 33, "stages": null},
      "reference": {"kind": "markov", "lam": 1, "a": 2},
      "seed": 0
    }

Support types are ``box`` (``lower``, ``upper``, optional ``lower_open`` and
``upper_open``), ``intervals`` (``intervals`` as ``[a, b]`` pairs) and
``points`` (``points`` as coordinate lists).  ``box`` and ``intervals`` may
carry ``schedule`` and ``breakpoints``.  Infinite bounds are written as the
strings ``"inf"`` and ``"-inf"``.  ``constants`` binds names usable in every
expression; a sweep overrides one of them.  ``reference`` optionally names a
closed form to compare against.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

from .dual import SolverParams
from .expr import ExprError, parse_expr
from .model import (Box, Exclusion, FinitePoints, IntervalUnion, LOWER, UPPER, ProblemSpec,
                    TruncationSchedule)

__all__ = ["ConfigError", "Config", "load_config", "parse_config"]

DIRECTIONS = (LOWER, UPPER, "both")
REFERENCE_KINDS = ("mgf", "power_mean", "markov", "jarzynski", "jensen", "variance")
_TOP_KEYS = {"dim", "support", "constraints", "objective", "direction", "constants",
             "solver", "reference", "seed"}


class ConfigError(ValueError):
    """Schema violations; ``errors`` lists every problem found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


def _num(v: Any, where: str, errors: list) -> float:
    if isinstance(v, bool):
        errors.append(f"{where}: expected a number, got {v!r}")
        return math.nan
    if isinstance(v, (int, float)):
        return float(v)
    if isinstance(v, str) and v.strip().lower() in ("inf", "+inf", "-inf", "infinity", "-infinity"):
        return float(v.strip().lower().replace("infinity", "inf"))
    errors.append(f"{where}: expected a number, got {v!r}")
    return math.nan


def _nums(v: Any, where: str, errors: list) -> tuple[float, ...]:
    if not isinstance(v, list):
        errors.append(f"{where}: expected a list")
        return ()
    return tuple(_num(x, f"{where}[{i}]", errors) for i, x in enumerate(v))


def _schedule(raw: Any, errors: list) -> TruncationSchedule | None:
    if raw is None:
        return None
    if not isinstance(raw, dict):
        errors.append("support.schedule: expected an object")
        return None
    unknown = set(raw) - {"base_radius", "growth", "max_stages", "exclusions"}
    if unknown:
        errors.append(f"support.schedule: unknown keys {sorted(unknown)}")
    try:
        exclusions = tuple(Exclusion(_num(e["at"], "exclusion.at", errors), e.get("side", "right"))
                           for e in raw.get("exclusions", []))
        k = raw.get("max_stages", 12)
        if not isinstance(k, int) or isinstance(k, bool):
            errors.append("support.schedule.max_stages: expected an integer")
            k = 1
        return TruncationSchedule(_num(raw.get("base_radius", 1.0), "schedule.base_radius", errors),
                                  _num(raw.get("growth", 2.0), "schedule.growth", errors),
                                  k, exclusions)
    except (KeyError, TypeError, AttributeError):
        errors.append("support.schedule.exclusions: expected objects with 'at' and 'side'")
        return None


def _support(raw: Any, errors: list):
    if not isinstance(raw, dict) or "type" not in raw:
        errors.append("support: expected an object with a 'type'")
        return None
    kind = raw["type"]
    sched = _schedule(raw.get("schedule"), errors)
    bps = _nums(raw.get("breakpoints", []), "support.breakpoints", errors)
    if kind == "box":
        lo = _nums(raw.get("lower"), "support.lower", errors)
        hi = _nums(raw.get("upper"), "support.upper", errors)
        lo_open = raw.get("lower_open")
        hi_open = raw.get("upper_open")
        try:
            return Box(lo, hi, lo_open, hi_open, sched, bps)
        except (ValueError, TypeError) as exc:
            errors.append(f"support: {exc}")
            return None
    if kind == "intervals":
        ivs = raw.get("intervals")
        if not isinstance(ivs, list) or not all(isinstance(iv, list) and len(iv) == 2 for iv in ivs):
            errors.append("support.intervals: expected a list of [a, b] pairs")
            return None
        pairs = tuple(tuple(_nums(iv, f"support.intervals[{i}]", errors)) for i, iv in enumerate(ivs))
        return IntervalUnion(pairs, sched, bps)
    if kind == "points":
        pts = raw.get("points")
        if not isinstance(pts, list):
            errors.append("support.points: expected a list")
            return None
        rows = []
        for i, q in enumerate(pts):
            q = q if isinstance(q, list) else [q]
            rows.append(_nums(q, f"support.points[{i}]", errors))
        return FinitePoints(tuple(rows))
    errors.append(f"support.type: unknown type {kind!r}")
    return None


def _solver(raw: Any, errors: list) -> tuple[SolverParams, tuple[int, ...] | None]:
    if raw is None:
        return SolverParams(), None
    if not isinstance(raw, dict):
        errors.append("solver: expected an object")
        return SolverParams(), None
    raw = dict(raw)
    stages = raw.pop("stages", None)
    if stages is not None:
        if not (isinstance(stages, list) and all(isinstance(k, int) and k >= 0 for k in stages)):
            errors.append("solver.stages: expected a list of nonnegative integers")
            stages = None
        else:
            stages = tuple(stages)
    names = {f.name for f in fields(SolverParams)}
    unknown = set(raw) - names
    if unknown:
        errors.append(f"solver: unknown keys {sorted(unknown)}")
    kw = {k: v for k, v in raw.items() if k in names}
    if isinstance(kw.get("grid_res"), list):
        kw["grid_res"] = tuple(kw["grid_res"])
    try:
        return SolverParams(**kw), stages
    except TypeError as exc:
        errors.append(f"solver: {exc}")
        return SolverParams(), stages


@dataclass(frozen=True)
class Config:
    """A validated configuration.  Expressions are kept as text so that a
    sweep can re-bind a constant and rebuild the problem."""

    dim: int
    support: Any
    constraints: tuple[tuple[str, float], ...]
    objective: str
    directions: tuple[str, ...]
    constants: Mapping[str, float]
    params: SolverParams
    stages: tuple[int, ...] | None
    reference: Mapping[str, Any] | None
    seed: int
    raw: Mapping[str, Any] = field(repr=False, default_factory=dict)

    def problem(self, direction: str | None = None, **overrides: float) -> ProblemSpec:
        consts = dict(self.constants)
        consts.update(overrides)
        try:
            cons = tuple((parse_expr(f, self.dim, consts), phi) for f, phi in self.constraints)
            obj = parse_expr(self.objective, self.dim, consts)
        except ExprError as exc:
            raise ConfigError([f"expression: {exc}"]) from exc
        return ProblemSpec(self.dim, self.support, cons, obj, direction or self.directions[0])


def parse_config(raw: Any) -> Config:
    """Validate a decoded JSON document; raises :class:`ConfigError`."""
    errors: list[str] = []
    if not isinstance(raw, dict):
        raise ConfigError(["top level: expected an object"])
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        errors.append(f"top level: unknown keys {sorted(unknown)}")
    for key in ("dim", "support", "constraints", "objective"):
        if key not in raw:
            errors.append(f"missing key {key!r}")
    if errors:
        raise ConfigError(errors)

    dim = raw["dim"]
    if not isinstance(dim, int) or isinstance(dim, bool) or dim < 1:
        errors.append("dim: expected a positive integer")
        dim = 1
    support = _support(raw["support"], errors)

    cons = []
    if not isinstance(raw["constraints"], list) or not raw["constraints"]:
        errors.append("constraints: expected a nonempty list")
    else:
        for i, c in enumerate(raw["constraints"]):
            if not isinstance(c, dict) or not isinstance(c.get("f"), str) or "phi" not in c:
                errors.append(f"constraints[{i}]: expected {{'f': text, 'phi': number}}")
                continue
            cons.append((c["f"], _num(c["phi"], f"constraints[{i}].phi", errors)))
    if not isinstance(raw["objective"], str):
        errors.append("objective: expected an expression string")

    direction = raw.get("direction", "both")
    if direction not in DIRECTIONS:
        errors.append(f"direction: expected one of {DIRECTIONS}")
        direction = "both"
    directions = (LOWER, UPPER) if direction == "both" else (direction,)

    consts = raw.get("constants", {})
    if not isinstance(consts, dict):
        errors.append("constants: expected an object")
        consts = {}
    consts = {str(k): _num(v, f"constants.{k}", errors) for k, v in consts.items()}

    params, stages = _solver(raw.get("solver"), errors)

    ref = raw.get("reference")
    if ref is not None and (not isinstance(ref, dict) or ref.get("kind") not in REFERENCE_KINDS):
        errors.append(f"reference: expected an object with 'kind' in {REFERENCE_KINDS}")
        ref = None

    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2 ** 64:
        errors.append("seed: expected an unsigned 64-bit integer")
        seed = 0

    if errors:
        raise ConfigError(errors)
    cfg = Config(dim, support, tuple(cons), raw["objective"], directions, consts, params,
                 stages, ref, seed, raw)
    cfg.problem()   # surface expression errors now
    return cfg


def load_config(path: str | Path) -> Config:
    """Read and validate a JSON configuration file."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc}"]) from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"invalid JSON: {exc}"]) from exc
    return parse_config(raw)
