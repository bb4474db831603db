"""Sharp bounds through the convex dual problem.

For the upper bound the solver minimises

    F_+(alpha) = sup_x  g(x) + <alpha, f(x) - phi>

over multipliers ``alpha``; the lower bound is ``-min F_-`` with
``F_-(alpha) = sup_x -(g(x) + <alpha, f(x) - phi>)``.  Each bounded stage of
the support is handled by a cutting-plane method whose result is checked
against the grid LP oracle; stage values are then carried to the limit.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

from .inner import InnerOptimizer, InnerResult, StageGrid
from .model import (DiscreteMeasure, ProblemSpec, UPPER, close_defined_endpoints,
                    stage_count, validate_problem)
from .oracle import OracleInfeasible, lp_bound_points
from .recovery import (CertificateCheck, RecoveryError, Unmatchable, active_points,
                       match_moments, polish_atoms, verify_certificate)

__all__ = ["SolverParams", "FeasibilityReport", "DualCertificate", "StageRecord",
           "BoundResult", "ProblemError", "check_feasibility", "solve_dual",
           "loose_bound", "extrapolate_limit", "FEASIBLE", "INFEASIBLE", "BOUNDARY"]

FEASIBLE, INFEASIBLE, BOUNDARY = "feasible", "infeasible", "boundary"
UNDERSIZED = "undersized"
OK, NONCONVERGENCE = "ok", "nonconvergence"

_HIGHS = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}


class ProblemError(ValueError):
    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(f"{d.code}: {d.message}" for d in self.diagnostics))


@dataclass(frozen=True)
class SolverParams:
    outer_iters: int = 300
    grid_res: int | tuple = 33
    refine_iters: int = 2
    tol_gap: float = 1e-7
    tol_gap_rel: float = 1e-9
    stage_policy: str = "adaptive"   # "adaptive" stops once stage values settle, "all" runs every stage
    n_candidates: int = 8
    trust_radius: float = 4.0
    stall_iters: int = 10
    oracle_check: bool = True
    extrapolate: bool = True
    divergence_threshold: float = 1e12
    tol_active: float = 1e-8
    recover: bool = True
    workers: int = 1

    def tol(self, value: float) -> float:
        return self.tol_gap + self.tol_gap_rel * (abs(value) if math.isfinite(value) else 0.0)


@dataclass(frozen=True)
class FeasibilityReport:
    status: str
    margin: float                   # inscribed l1-ball radius around phi (0 unless feasible)
    alpha: np.ndarray | None = None  # separating direction when infeasible
    epsilon: float | None = None
    grid_size: int = 0
    stage: int = 0


@dataclass(frozen=True)
class DualCertificate:
    alpha: np.ndarray
    bound: float
    direction: str
    active_points: np.ndarray
    stage: int
    inner_tol: float

    @property
    def c(self) -> float:
        """Offset of the hyperplane ``<alpha, f> + g + c = 0`` (upper) with ``beta = 1``."""
        return -float(np.dot(self.alpha, self._phi)) - self.bound

    _phi: np.ndarray = field(default=None, repr=False)


@dataclass(frozen=True)
class StageRecord:
    stage: int
    feasibility: FeasibilityReport
    bound: float | None = None          # dual value on this stage
    oracle_value: float | None = None   # grid LP value on this stage
    alpha: np.ndarray | None = None
    iterations: int = 0
    converged: bool = False


@dataclass(frozen=True)
class BoundResult:
    bound: float
    direction: str
    status: str
    certificate: DualCertificate | None
    measure: DiscreteMeasure | None
    oracle_gap: float | None
    history: tuple
    feasibility: FeasibilityReport
    stages: tuple[StageRecord, ...] = ()
    stage_bound: float | None = None
    extrapolated: bool = False
    diverged: bool = False
    check: CertificateCheck | None = None
    diagnostics: tuple[str, ...] = ()


# -- feasibility --------------------------------------------------------------

def _feasibility(Fc: np.ndarray, phi: np.ndarray, stage: int) -> FeasibilityReport:
    n, m = Fc.shape
    if n < m + 2:
        raise ValueError(f"feasibility grid has {n} points, need at least {m + 2}")
    tol_b = 1e-6 * (1.0 + float(np.abs(phi).max()))
    # separation: max t  s.t.  <alpha, f_i - phi> >= t,  |alpha|_inf <= 1
    c = np.zeros(m + 1)
    c[-1] = -1.0
    A = np.hstack([-Fc, np.ones((n, 1))])
    res = linprog(c, A_ub=A, b_ub=np.zeros(n), bounds=[(-1, 1)] * m + [(None, None)],
                  method="highs", options=_HIGHS)
    t = -res.fun if res.status == 0 else 0.0
    if t > tol_b:
        alpha = res.x[:m]
        return FeasibilityReport(INFEASIBLE, 0.0, alpha, t / 2.0, n, stage)
    # inscribed l1-ball: push phi along each signed axis as far as the hull allows
    w = np.abs(Fc).max(axis=0)
    w[w == 0] = 1.0
    Fs = Fc / w
    margin = math.inf
    for j in range(m):
        for sgn in (1.0, -1.0):
            d = np.zeros(m)
            d[j] = sgn
            Aeq = np.vstack([np.hstack([Fs.T, -d[:, None]]), np.append(np.ones(n), 0.0)])
            beq = np.append(np.zeros(m), 1.0)
            cc = np.zeros(n + 1)
            cc[-1] = -1.0
            r = linprog(cc, A_eq=Aeq, b_eq=beq, bounds=[(0, None)] * n + [(None, None)],
                        method="highs", options=_HIGHS)
            eps = (-r.fun) * w[j] if r.status == 0 else -math.inf
            margin = min(margin, eps)
    if margin < tol_b:
        return FeasibilityReport(BOUNDARY, max(margin, 0.0), None, None, n, stage)
    return FeasibilityReport(FEASIBLE, margin, None, None, n, stage)


def _valid_image(opt: InnerOptimizer) -> np.ndarray:
    return opt.Fc[opt.valid]


def check_feasibility(p: ProblemSpec, grid_res=33, stage: int = 0) -> FeasibilityReport:
    """Classify ``phi`` against the hull of ``f`` over the stage grid.

    Infeasible reports carry ``alpha`` with ``<alpha, f(x) - phi> > epsilon``
    at every grid point.  Points within ``1e-6 (1 + |phi|)`` of the hull
    boundary, on either side, are reported as boundary.
    """
    p = close_defined_endpoints(p)
    opt = InnerOptimizer(p, stage, grid_res, refine_iters=0)
    return _feasibility(_valid_image(opt), p.phi, stage)


# -- one stage ----------------------------------------------------------------

class _Cuts:
    """Points whose Lagrangian values give affine minorants of ``F``."""

    def __init__(self, m: int):
        self.keys: set = set()
        self.X: list = []
        self.Fc: list = []
        self.g: list = []

    def add(self, X, Fc, g):
        for x, fc, gv in zip(X, Fc, g):
            if not (np.all(np.isfinite(fc)) and math.isfinite(gv)):
                continue
            key = tuple(x)
            if key in self.keys:
                continue
            self.keys.add(key)
            self.X.append(np.array(x))
            self.Fc.append(np.array(fc))
            self.g.append(float(gv))

    def arrays(self):
        return np.array(self.X), np.array(self.Fc), np.array(self.g)


def _add_result_cuts(cuts: _Cuts, res: InnerResult) -> None:
    k = len(res.maximizers)
    pick = [0, k - 1] if k > 1 else [0]
    cuts.add(res.maximizers[pick], res.f_image[pick], res.g_values[pick])
    cuts.add(res.candidates, res.candidate_image, res.candidate_g)


def _master(Fh: np.ndarray, gh: np.ndarray, R: float):
    """min t  s.t.  t >= gh_i + Fh_i . a,  |a|_inf <= R."""
    n, m = Fh.shape
    c = np.zeros(m + 1)
    c[-1] = 1.0
    A = np.hstack([Fh, -np.ones((n, 1))])
    res = linprog(c, A_ub=A, b_ub=-gh, bounds=[(-R, R)] * m + [(None, None)],
                  method="highs", options=_HIGHS)
    if res.status != 0:
        return None, None
    return res.x[:m], res.x[-1]


@dataclass
class _StageOutcome:
    alpha: np.ndarray
    value: float           # best F_sign
    result: InnerResult
    iterations: int
    converged: bool
    oracle_value: float | None
    oracle_measure: DiscreteMeasure | None
    kelley_gap: float


def _solve_stage(p: ProblemSpec, opt: InnerOptimizer, sign: int, params: SolverParams,
                 alpha0: np.ndarray, cuts: _Cuts, history: list) -> _StageOutcome:
    """Box-step cutting planes on one stage.

    The model is re-centred on the best multipliers found so far, which keeps
    the master LP's constants near zero so its tolerances act on the gap, not
    on the (possibly huge) scale of ``g``.  Steps are measured in units of
    ``max|g| / max|f_j - phi_j|`` per coordinate.
    """
    Fv = opt.Fc[opt.valid]
    w = np.abs(Fv).max(axis=0)
    w[w == 0] = 1.0
    gs = float(np.abs(opt.g[opt.valid]).max())
    if not gs > 0:
        gs = 1.0
    to_alpha = gs / w          # step = d_hat * to_alpha

    R = params.trust_radius
    best_alpha = np.asarray(alpha0, dtype=float).copy()
    best = opt.evaluate(best_alpha, sign)
    best_val = best.value
    history.append((opt.stage, best_alpha.copy(), best_val))
    _add_result_cuts(cuts, best)
    stall = 0
    converged = False
    oracle_value = None
    oracle_measure = None
    kelley_gap = math.inf
    last_checked = math.inf   # oracle reruns only once the model gap has halved
    it = 0
    while it < params.outer_iters:
        it += 1
        _, Fc, g = cuts.arrays()
        ts = max(abs(best_val), 1.0)
        const = (sign * (g + Fc @ best_alpha) - best_val) / ts
        slope = sign * Fc * (to_alpha / ts)
        d_hat, t = _master(slope, const, R)
        if d_hat is None or stall >= params.stall_iters:
            # Polyak step from the best point towards the model's lower estimate
            s_hat = sign * best.f_image[0] * to_alpha / ts
            gap = -t if t is not None and t < 0 else params.tol(best_val) / ts
            nrm = math.hypot(*s_hat)    # overflow-safe on diverging stages
            if 0 < nrm < math.inf:
                d_hat = -(gap / nrm) * (s_hat / nrm)
            else:
                d_hat = np.zeros_like(best_alpha)
            stall = 0
            t = None
        on_box = np.abs(d_hat).max() >= R * (1 - 1e-9)
        alpha = best_alpha + d_hat * to_alpha
        res = opt.evaluate(alpha, sign)
        history.append((opt.stage, alpha.copy(), res.value))
        _add_result_cuts(cuts, res)
        if t is not None:
            kelley_gap = -t * ts
        if res.value < best_val:
            best_val, best_alpha, best = res.value, alpha, res
            stall = 0
        else:
            stall += 1
        if on_box:
            R *= 2.0
            continue
        if t is None:
            continue
        tol = max(params.tol(best_val), _noise_floor(opt, best_alpha))
        if kelley_gap <= tol and kelley_gap < last_checked:
            if not params.oracle_check:
                converged = True
                break
            last_checked = 0.5 * kelley_gap
            for _ in range(COLUMN_ROUNDS):
                oracle_value, oracle_measure = _stage_oracle(p, opt, cuts, sign)
                if oracle_value is None or best_val - sign * oracle_value <= tol:
                    break
                # a grid measure straddles each interior contact point; put
                # atoms exactly where the moment equations want them
                if not _add_polished(p, opt, cuts, oracle_measure):
                    break
            if oracle_value is not None and best_val - sign * oracle_value <= tol:
                converged = True
                break
    if params.oracle_check and oracle_value is None:
        oracle_value, oracle_measure = _stage_oracle(p, opt, cuts, sign)
    return _StageOutcome(best_alpha, best_val, best, it, converged, oracle_value,
                         oracle_measure, kelley_gap)


COLUMN_ROUNDS = 4


def _noise_floor(opt: InnerOptimizer, alpha: np.ndarray) -> float:
    """Rounding level of the Lagrangian on the stage.

    ``g + <alpha, f - phi>`` is a sum of terms as large as ``max|g|`` and
    ``|alpha_j| max|f_j - phi_j|``; no gap below a few ulps of that is
    resolvable in double precision.
    """
    scale = float(np.abs(opt.g[opt.valid]).max()) + float(np.abs(opt.Fc[opt.valid]).max(axis=0) @ np.abs(alpha))
    return 64 * np.finfo(float).eps * scale


def _stage_oracle(p: ProblemSpec, opt: InnerOptimizer, cuts: _Cuts, sign: int):
    """Grid LP over the stage grid plus every cut point seen so far."""
    X = opt.grid.points[opt.valid]
    if cuts.X:
        X = np.vstack([X, np.array(cuts.X)])
    X = np.unique(X, axis=0)
    try:
        return lp_bound_points(p, X, UPPER if sign > 0 else "lower")
    except (OracleInfeasible, ArithmeticError):
        return None, None


def _merge_radius(opt: InnerOptimizer) -> float:
    """A hundredth of the coarsest grid spacing."""
    n = max(len(opt.grid.points), 2)
    return 0.01 * opt.grid.diameter / (n ** (1.0 / opt.grid.points.shape[1]) - 1 + 1e-300)


def _polish(p: ProblemSpec, opt: InnerOptimizer, mu):
    return polish_atoms(p, mu, opt.grid.pieces(), _merge_radius(opt))


def _add_polished(p: ProblemSpec, opt: InnerOptimizer, cuts: _Cuts, mu) -> bool:
    """Add the polished atoms of ``mu`` as primal points; False if nothing new."""
    nu = _polish(p, opt, mu)
    if nu is None:
        return False
    X = nu.as_array()
    Fc, g, valid = opt.image(X)
    before = len(cuts.X)
    cuts.add(X[valid], Fc[valid], g[valid])
    return len(cuts.X) > before


# -- limits across stages -----------------------------------------------------

def _aitken(u: np.ndarray) -> np.ndarray:
    d1 = u[2:] - u[1:-1]
    d0 = u[1:-1] - u[:-2]
    dd = d1 - d0
    out = u[2:].copy()
    ok = np.abs(dd) > 1e-300
    out[ok] = u[2:][ok] - d1[ok] ** 2 / dd[ok]
    return out


def extrapolate_limit(values: Sequence[float], increasing: bool | None = None) -> float:
    """Limit estimate of a slowly converging monotone sequence.

    Applies the Aitken delta-squared transform twice when there are at least
    five terms, once with three or four.  An estimate on the wrong side of the
    last term (for a monotone sequence) falls back to the last term.
    """
    u = np.asarray(values, dtype=float)
    if len(u) < 3 or np.all(u[1:] == u[:-1]):
        return float(u[-1])
    est = _aitken(u)
    if len(u) >= 5:
        est2 = _aitken(est)
        if np.all(np.isfinite(est2)):
            est = est2
    val = float(est[-1])
    if not math.isfinite(val):
        return float(u[-1])
    if increasing is True and val < u[-1]:
        return float(u[-1])
    if increasing is False and val > u[-1]:
        return float(u[-1])
    return val


def _diverging(values: Sequence[float], sign: int, tol: float, run: int = 3) -> bool:
    """The last ``run`` increments move in the unbounded direction without shrinking."""
    if len(values) < run + 1:
        return False
    d = sign * np.diff(np.asarray(values[-(run + 1):], dtype=float))
    if np.any(d <= tol):
        return False
    return bool(np.all(d[1:] / d[:-1] >= 1.0))


# -- driver -------------------------------------------------------------------

def _as_params(params) -> SolverParams:
    if params is None:
        return SolverParams()
    if isinstance(params, dict):
        return SolverParams(**params)
    return params


def solve_dual(p: ProblemSpec, params: SolverParams | dict | None = None,
               stages: Sequence[int] | None = None) -> BoundResult:
    """Sharp bound in direction ``p.direction`` via the dual over support stages."""
    params = _as_params(params)
    diags = validate_problem(p)
    if diags:
        raise ProblemError(diags)
    p = close_defined_endpoints(p)
    sign = 1 if p.direction == UPPER else -1
    K = stage_count(p.support)
    stage_list = list(range(K)) if stages is None else list(stages)
    history: list = []
    records: list[StageRecord] = []
    feasible: list[tuple[StageRecord, InnerOptimizer, _StageOutcome]] = []
    cuts = _Cuts(p.m)
    alpha = np.zeros(p.m)
    last_report = None
    diverged = False
    settled = False
    for k in stage_list:
        opt = InnerOptimizer(p, k, params.grid_res, params.refine_iters,
                             n_candidates=params.n_candidates, workers=params.workers,
                             tol_active_rel=params.tol_active)
        try:
            report = _feasibility(_valid_image(opt), p.phi, k)
        except ValueError:
            # too few stage points to carry a measure with m + 1 atoms
            report = FeasibilityReport(UNDERSIZED, 0.0, grid_size=int(opt.valid.sum()), stage=k)
        last_report = report
        if report.status != FEASIBLE:
            records.append(StageRecord(k, report))
            continue
        out = _solve_stage(p, opt, sign, params, alpha, cuts, history)
        alpha = out.alpha
        bound_k = sign * out.value
        rec = StageRecord(k, report, bound_k,
                          out.oracle_value, out.alpha.copy(), out.iterations, out.converged)
        records.append(rec)
        feasible.append((rec, opt, out))
        if abs(bound_k) > params.divergence_threshold:
            diverged = True
            break
        values_so_far = [r.bound for r, _, _ in feasible]
        if len(values_so_far) >= 6 and _diverging(values_so_far, sign, params.tol(bound_k), run=4):
            diverged = True
            break
        if params.stage_policy == "adaptive" and len(feasible) >= 2:
            prev = feasible[-2][0].bound
            if abs(bound_k - prev) <= params.tol(bound_k):
                settled = True
                break

    if not feasible:
        status = BOUNDARY if any(r.feasibility.status == BOUNDARY for r in records) else INFEASIBLE
        bad = math.inf if sign < 0 else -math.inf  # bound over an empty feasible set
        return BoundResult(bad, p.direction, status, None, None, None, tuple(history),
                           last_report, tuple(records))

    rec, opt, out = feasible[-1]
    values = [r.bound for r, _, _ in feasible]
    diagnostics = []
    extrapolated = False
    if not diverged and not settled and len(values) >= 4 and _diverging(values, sign, params.tol(values[-1])):
        diverged = True
    if diverged:
        bound = sign * math.inf
        diagnostics.append("stage values grow without limit")
    elif not settled and params.extrapolate and len(values) >= 3 and len(stage_list) > 1:
        bound = extrapolate_limit(values, increasing=(sign > 0))
        extrapolated = bound != values[-1]
        if extrapolated:
            diagnostics.append("schedule exhausted before stage values settled; limit extrapolated")
    else:
        bound = values[-1]

    cert = DualCertificate(out.alpha.copy(), rec.bound, p.direction, np.empty((0, p.dim)),
                           rec.stage, out.result.tol_active, _phi=p.phi)
    measure = None
    check = None
    if params.recover and not diverged:
        try:
            # the certificate is only optimal up to the stage gap, so the
            # contact set is collected with a matching tolerance
            slack = max(out.result.tol_active, min(out.kelley_gap, 1e-4 * (1 + abs(rec.bound))))
            pts = active_points(p, cert, tol_active=slack, optimizer=opt)
            cert = replace(cert, active_points=pts)
            measure = match_moments(pts, p)
        except (RecoveryError, Unmatchable) as exc:
            # the contact set of an inexact multiplier can miss the moments;
            # the stage LP over grid and cut points still gives a witness
            measure = out.oracle_measure
            if measure is None:
                _, measure = _stage_oracle(p, opt, cuts, sign)
            if measure is not None:
                measure = _polish(p, opt, measure) or measure
            if measure is None:
                diagnostics.append(f"no witness measure: {exc}")
            else:
                diagnostics.append("witness taken from the stage LP: contact set did not match the moments")
        if measure is not None:
            check = verify_certificate(p, cert, measure)
    oracle_gap = None
    if rec.oracle_value is not None:
        oracle_gap = abs(rec.bound - rec.oracle_value)
    status = OK if (out.converged or diverged) else NONCONVERGENCE
    return BoundResult(bound, p.direction, status, cert, measure, oracle_gap, tuple(history),
                       rec.feasibility, tuple(records), rec.bound, extrapolated, diverged,
                       check, tuple(diagnostics))


def loose_bound(p: ProblemSpec, alpha, stage: int = 0, grid_res=33, refine_iters: int = 2) -> float:
    """One-sided bound valid for every feasible measure on the stage: ``F_+(alpha)``
    for the upper direction, ``-F_-(alpha)`` for the lower one."""
    p = close_defined_endpoints(p)
    sign = 1 if p.direction == UPPER else -1
    opt = InnerOptimizer(p, stage, grid_res, refine_iters)
    return sign * opt.evaluate(alpha, sign).value
