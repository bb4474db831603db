"""Problem definition: support sets, truncation schedules, measures."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .expr import Expr, eval_expr, eval_many, max_coord

__all__ = [
    "Exclusion", "TruncationSchedule", "Box", "IntervalUnion", "FinitePoints",
    "SupportSet", "ProblemSpec", "DiscreteMeasure", "Diagnostic",
    "validate_problem", "measure_expectation", "truncation_stage",
    "stage_cells", "stage_count", "close_defined_endpoints", "MEMBERSHIP_TOL",
]

MEMBERSHIP_TOL = 1e-9
LOWER, UPPER = "lower", "upper"


@dataclass(frozen=True)
class Exclusion:
    """A point near which the stages cut out a shrinking one-sided gap.

    ``side`` is ``"right"`` (remove ``(at, at + r)``), ``"left"`` (remove
    ``(at - r, at)``), ``"both"``, or ``"none"`` (only pin a grid node at
    ``at``).  The point itself always stays in the stage.
    """
    at: float
    side: str = "right"


@dataclass(frozen=True)
class TruncationSchedule:
    """Stage ``k`` keeps ``S`` inside radius ``base_radius * growth**k`` and
    drops gaps of width ``base_radius / growth**k`` at exclusion points and
    open finite endpoints."""
    base_radius: float
    growth: float
    max_stages: int
    exclusions: tuple[Exclusion, ...] = ()

    def radius(self, k: int) -> float:
        return self.base_radius * self.growth ** k

    def gap(self, k: int) -> float:
        return self.base_radius / self.growth ** k


@dataclass(frozen=True)
class Box:
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    lower_open: tuple[bool, ...] | None = None
    upper_open: tuple[bool, ...] | None = None
    schedule: TruncationSchedule | None = None
    breakpoints: tuple[float, ...] = ()  # extra grid nodes, 1-D only

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))
        n = len(self.lower)
        if self.lower_open is None:
            object.__setattr__(self, "lower_open", tuple(math.isinf(v) for v in self.lower))
        if self.upper_open is None:
            object.__setattr__(self, "upper_open", tuple(math.isinf(v) for v in self.upper))
        object.__setattr__(self, "lower_open", tuple(bool(v) for v in self.lower_open))
        object.__setattr__(self, "upper_open", tuple(bool(v) for v in self.upper_open))
        if len(self.upper) != n or len(self.lower_open) != n or len(self.upper_open) != n:
            raise ValueError("box bounds and flags must have equal length")

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def bounded(self) -> bool:
        return all(map(math.isfinite, self.lower + self.upper))

    def contains(self, x, tol: float = MEMBERSHIP_TOL) -> bool:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return bool(np.all(x >= np.array(self.lower) - tol) and np.all(x <= np.array(self.upper) + tol))


@dataclass(frozen=True)
class IntervalUnion:
    """Sorted, pairwise disjoint closed intervals on the real line."""
    intervals: tuple[tuple[float, float], ...]
    schedule: TruncationSchedule | None = None
    breakpoints: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "intervals",
                           tuple((float(a), float(b)) for a, b in self.intervals))

    dim = 1

    @property
    def bounded(self) -> bool:
        return all(math.isfinite(a) and math.isfinite(b) for a, b in self.intervals)

    def contains(self, x, tol: float = MEMBERSHIP_TOL) -> bool:
        v = float(np.ravel(x)[0])
        return any(a - tol <= v <= b + tol for a, b in self.intervals)


@dataclass(frozen=True)
class FinitePoints:
    points: tuple[tuple[float, ...], ...]
    schedule: None = None

    def __post_init__(self):
        pts = tuple(tuple(float(c) for c in np.atleast_1d(p)) for p in self.points)
        object.__setattr__(self, "points", pts)

    @property
    def dim(self) -> int:
        return len(self.points[0]) if self.points else 0

    bounded = True

    def as_array(self) -> np.ndarray:
        return np.array(self.points, dtype=float).reshape(len(self.points), -1)

    def contains(self, x, tol: float = MEMBERSHIP_TOL) -> bool:
        if not self.points:
            return False
        d = np.abs(self.as_array() - np.atleast_1d(np.asarray(x, dtype=float)))
        return bool(np.any(np.all(d <= tol, axis=1)))


SupportSet = Union[Box, IntervalUnion, FinitePoints]


@dataclass(frozen=True)
class ProblemSpec:
    dim: int
    support: SupportSet
    constraints: tuple[tuple[Expr, float], ...]
    objective: Expr
    direction: str = UPPER

    def __post_init__(self):
        object.__setattr__(self, "constraints",
                           tuple((f, float(phi)) for f, phi in self.constraints))

    @property
    def m(self) -> int:
        return len(self.constraints)

    @property
    def fs(self) -> tuple[Expr, ...]:
        return tuple(f for f, _ in self.constraints)

    @property
    def phi(self) -> np.ndarray:
        return np.array([v for _, v in self.constraints], dtype=float)

    def with_direction(self, direction: str) -> "ProblemSpec":
        return ProblemSpec(self.dim, self.support, self.constraints, self.objective, direction)

    def with_support(self, support: SupportSet) -> "ProblemSpec":
        return ProblemSpec(self.dim, support, self.constraints, self.objective, self.direction)

    def image(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Evaluate ``f`` and ``g`` on the rows of ``X``.

        Returns ``(F, g, valid)`` with ``F`` of shape ``(N, m)``.
        """
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        valid = np.ones(X.shape[0], dtype=bool)
        F = np.empty((X.shape[0], self.m))
        for j, f in enumerate(self.fs):
            F[:, j], ok = eval_many(f, X)
            valid &= ok
        g, ok = eval_many(self.objective, X)
        valid &= ok
        return F, g, valid


@dataclass(frozen=True)
class DiscreteMeasure:
    atoms: tuple[tuple[float, ...], ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        atoms = tuple(tuple(float(c) for c in np.atleast_1d(a)) for a in self.atoms)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if len(self.atoms) != len(self.weights):
            raise ValueError("atoms and weights differ in length")
        if not self.atoms:
            raise ValueError("a measure needs at least one atom")
        if any(w < 0 for w in self.weights):
            raise ValueError("negative weight")
        if abs(sum(self.weights) - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {sum(self.weights)!r}, not 1")
        if len(set(self.atoms)) != len(self.atoms):
            raise ValueError("atoms must be distinct")

    @classmethod
    def normalized(cls, atoms, weights) -> "DiscreteMeasure":
        """Build a measure after renormalising ``weights`` to sum to one."""
        w = np.clip(np.asarray(weights, dtype=float), 0.0, None)
        w = w / w.sum()
        # fix the last weight so the sum is 1 to the last bit
        w = list(w)
        w[-1] = 1.0 - math.fsum(w[:-1])
        if w[-1] < 0:
            w[-1] = 0.0
        return cls(tuple(map(tuple, np.atleast_2d(np.asarray(atoms, dtype=float).reshape(len(w), -1)))), tuple(w))

    def __len__(self):
        return len(self.atoms)

    def as_array(self) -> np.ndarray:
        return np.array(self.atoms, dtype=float)

    def in_support(self, s: SupportSet, tol: float = MEMBERSHIP_TOL) -> bool:
        return all(s.contains(a, tol) for a in self.atoms)


def measure_expectation(mu: DiscreteMeasure, e: Expr) -> float:
    """Sum of ``weight * e(atom)``; raises :class:`DomainError` on a bad atom."""
    return math.fsum(w * eval_expr(e, a) for a, w in zip(mu.atoms, mu.weights))


# -- validation ---------------------------------------------------------------

@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str


def _support_diagnostics(s: SupportSet, dim: int) -> list[Diagnostic]:
    out = []
    if s.dim != dim:
        out.append(Diagnostic("DimensionMismatch", f"support has dimension {s.dim}, problem has {dim}"))
    if isinstance(s, Box):
        for i, (lo, hi) in enumerate(zip(s.lower, s.upper)):
            if not lo <= hi:
                out.append(Diagnostic("InvalidBox", f"coordinate {i + 1}: lower {lo} > upper {hi}"))
        if not s.bounded and s.schedule is None:
            out.append(Diagnostic("UnboundedWithoutSchedule", "infinite box needs a truncation schedule"))
        if s.dim > 1 and (s.breakpoints or (s.schedule and s.schedule.exclusions)):
            out.append(Diagnostic("UnsupportedExclusion", "exclusions and breakpoints are 1-D only"))
        if s.dim > 1 and s.schedule is not None and any(
                o and math.isfinite(v) for o, v in zip(s.lower_open + s.upper_open, s.lower + s.upper)):
            out.append(Diagnostic("UnsupportedExclusion", "open finite endpoints are 1-D only"))
    elif isinstance(s, IntervalUnion):
        if not s.intervals:
            out.append(Diagnostic("EmptySupport", "no intervals"))
        for a, b in s.intervals:
            if not a <= b:
                out.append(Diagnostic("InvalidInterval", f"interval [{a}, {b}] is reversed"))
        for (a0, b0), (a1, b1) in zip(s.intervals, s.intervals[1:]):
            if not b0 < a1:
                out.append(Diagnostic("OverlappingIntervals", f"[{a0}, {b0}] and [{a1}, {b1}] overlap or are unsorted"))
        if not s.bounded and s.schedule is None:
            out.append(Diagnostic("UnboundedWithoutSchedule", "infinite interval needs a truncation schedule"))
    elif isinstance(s, FinitePoints):
        if not s.points:
            out.append(Diagnostic("EmptySupport", "no points"))
        elif len(set(s.points)) != len(s.points):
            out.append(Diagnostic("DuplicatePoints", "support points must be distinct"))
        elif any(len(p) != len(s.points[0]) for p in s.points):
            out.append(Diagnostic("DimensionMismatch", "support points have mixed dimensions"))
    sched = getattr(s, "schedule", None)
    if sched is not None:
        if not sched.base_radius > 0:
            out.append(Diagnostic("InvalidSchedule", "base radius must be positive"))
        if not sched.growth > 1:
            out.append(Diagnostic("InvalidSchedule", "growth factor must exceed 1"))
        if sched.max_stages < 1:
            out.append(Diagnostic("InvalidSchedule", "need at least one stage"))
        for ex in sched.exclusions:
            if ex.side not in ("left", "right", "both", "none"):
                out.append(Diagnostic("InvalidSchedule", f"bad exclusion side {ex.side!r}"))
    return out


def validate_problem(p: ProblemSpec) -> list[Diagnostic]:
    """Structural checks; an empty list means the problem is well formed."""
    out = []
    if p.dim < 1:
        out.append(Diagnostic("InvalidDimension", "dimension must be positive"))
    if p.m < 1:
        out.append(Diagnostic("NoConstraints", "at least one constraint is required"))
    if p.direction not in (LOWER, UPPER):
        out.append(Diagnostic("InvalidDirection", f"direction must be 'lower' or 'upper', got {p.direction!r}"))
    for j, (f, phi) in enumerate(p.constraints):
        if max_coord(f) > p.dim:
            out.append(Diagnostic("DimensionMismatch", f"constraint {j + 1} references x{max_coord(f)}"))
        if not math.isfinite(phi):
            out.append(Diagnostic("NonFinitePhi", f"constraint {j + 1} has target {phi}"))
    if max_coord(p.objective) > p.dim:
        out.append(Diagnostic("DimensionMismatch", f"objective references x{max_coord(p.objective)}"))
    out.extend(_support_diagnostics(p.support, p.dim))
    return out


# -- truncation stages --------------------------------------------------------

def stage_count(s: SupportSet) -> int:
    sched = getattr(s, "schedule", None)
    return 1 if sched is None else sched.max_stages


def _intervals_1d(s: SupportSet) -> list[tuple[float, float, bool, bool]]:
    if isinstance(s, Box):
        return [(s.lower[0], s.upper[0], s.lower_open[0], s.upper_open[0])]
    return [(a, b, math.isinf(a), math.isinf(b)) for a, b in s.intervals]


def _stage_pieces_1d(s: SupportSet, k: int, coord: int = 0):
    """Closed pieces of stage ``k`` along one coordinate, plus the grid breakpoints."""
    sched = s.schedule
    if isinstance(s, Box):
        ivs = [(s.lower[coord], s.upper[coord], s.lower_open[coord], s.upper_open[coord])]
    else:
        ivs = _intervals_1d(s)
    if sched is None:
        for a, b, _, _ in ivs:
            if not (math.isfinite(a) and math.isfinite(b)):
                raise ValueError("unbounded support without a truncation schedule")
        pieces = [(a, b) for a, b, _, _ in ivs]
        breaks = set(getattr(s, "breakpoints", ()))
        return pieces, breaks

    R = sched.radius(k)
    gaps = [sched.gap(j) for j in range(k + 1)]
    cuts: list[tuple[float, float]] = []      # open intervals removed
    breaks: set[float] = set(getattr(s, "breakpoints", ()))
    breaks.update(v for j in range(k + 1) for v in (sched.radius(j), -sched.radius(j)))
    exclusions = list(sched.exclusions) if coord == 0 else []
    for a, b, lo_open, hi_open in ivs:
        if lo_open and math.isfinite(a):
            exclusions.append(Exclusion(a, "right"))
        if hi_open and math.isfinite(b):
            exclusions.append(Exclusion(b, "left"))
    for ex in exclusions:
        breaks.add(ex.at)
        r = gaps[-1]
        if ex.side in ("right", "both"):
            cuts.append((ex.at, ex.at + r))
            breaks.update(ex.at + gj for gj in gaps)
        if ex.side in ("left", "both"):
            cuts.append((ex.at - r, ex.at))
            breaks.update(ex.at - gj for gj in gaps)

    pieces = []
    for a, b, lo_open, hi_open in ivs:
        lo, hi = max(a, -R), min(b, R)
        if lo > hi:
            continue
        segs = [(lo, hi)]
        for c0, c1 in cuts:
            nxt = []
            for p0, p1 in segs:
                if c1 <= p0 or c0 >= p1:
                    nxt.append((p0, p1))
                    continue
                if p0 < c0 or (p0 == c0 and not (lo_open and p0 == a)):
                    nxt.append((p0, min(c0, p1)))
                if c1 <= p1:
                    nxt.append((c1, p1))
            segs = nxt
        # an open endpoint itself never belongs to a stage
        segs = [(p0, p1) for p0, p1 in segs
                if not (lo_open and p1 == a) and not (hi_open and p0 == b)]
        pieces.extend(segs)
    return pieces, breaks


def truncation_stage(s: SupportSet, k: int) -> SupportSet:
    """Bounded stage ``k`` of the progressive cover attached to ``s``.

    Bounded supports without a schedule are their own (single) stage.
    """
    if k < 0 or k >= stage_count(s):
        raise IndexError(f"stage {k} outside schedule of {stage_count(s)} stages")
    if isinstance(s, FinitePoints):
        return s
    if isinstance(s, Box) and s.dim > 1:
        if s.schedule is None:
            return Box(s.lower, s.upper, (False,) * s.dim, (False,) * s.dim)
        R = s.schedule.radius(k)
        lo = tuple(max(v, -R) for v in s.lower)
        hi = tuple(min(v, R) for v in s.upper)
        return Box(lo, hi, (False,) * s.dim, (False,) * s.dim)
    pieces, _ = _stage_pieces_1d(s, k)
    return IntervalUnion(tuple(sorted(pieces)))


def stage_cells(s: SupportSet, k: int, coord: int = 0) -> list[list[float]]:
    """Per-piece sorted breakpoints of stage ``k`` along ``coord``.

    Each inner list starts and ends at a piece endpoint; consecutive entries
    delimit the cells that receive a regular grid.  Breakpoints of stage
    ``k`` are a subset of those of stage ``k + 1`` inside the common pieces,
    which keeps stage grids nested.
    """
    pieces, breaks = _stage_pieces_1d(s, k, coord)
    out = []
    for p0, p1 in sorted(pieces):
        inner = sorted(b for b in breaks if p0 < b < p1)
        out.append([p0] + inner + [p1] if p1 > p0 else [p0])
    return out


def close_defined_endpoints(p: ProblemSpec) -> ProblemSpec:
    """Close finite open endpoints of a 1-D support where every expression is defined.

    Bounds over a set and over its closure agree when the data are continuous
    there, so such an endpoint needs no shrinking gap.  Endpoints where some
    expression is undefined stay open and are approached through the stages.
    """
    s = p.support
    if not isinstance(s, Box) or s.dim != 1:
        return p
    exprs = list(p.fs) + [p.objective]

    def defined(v):
        return all(eval_many(e, np.array([[v]]))[1][0] for e in exprs)

    lo_open = s.lower_open[0] and not (math.isfinite(s.lower[0]) and defined(s.lower[0]))
    hi_open = s.upper_open[0] and not (math.isfinite(s.upper[0]) and defined(s.upper[0]))
    if (lo_open, hi_open) == (s.lower_open[0], s.upper_open[0]):
        return p
    box = Box(s.lower, s.upper, (lo_open,), (hi_open,), s.schedule, s.breakpoints)
    return p.with_support(box)
