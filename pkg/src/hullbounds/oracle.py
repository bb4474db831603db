"""Exact extremisation over measures supported on a finite grid.

Over a finite set of points the bound problem is the linear program

    extremise  sum_i p_i g(x_i)
    subject to sum_i p_i f(x_i) = phi,  sum_i p_i = 1,  p >= 0,

which is solved here with a dense two-phase tableau simplex that falls back to
Bland's rule when it meets degenerate pivots.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from .model import DiscreteMeasure, FinitePoints, ProblemSpec, UPPER

__all__ = ["OracleInfeasible", "LPResult", "simplex_solve", "lp_bound",
           "lp_bound_points", "enumerate_bound"]

FEAS_TOL = 1e-9
PIVOT_TOL = 1e-12
COST_TOL = 1e-14
DEGENERATE_RUN = 8


class OracleInfeasible(ValueError):
    """phi lies outside the hull of the grid image."""


class LPResult:
    """Optimal value, primal point, final basis and row duals ``y``
    (``y @ A[:, j] == c[j]`` on the basis)."""

    __slots__ = ("value", "x", "basis", "pivots", "duals")

    def __init__(self, value, x, basis, pivots, duals=None):
        self.value = value
        self.x = x
        self.basis = basis
        self.pivots = pivots
        self.duals = duals


def _pivot(T: np.ndarray, r: int, c: int) -> None:
    T[r] /= T[r, c]
    col = T[:, c].copy()
    col[r] = 0.0
    T -= np.outer(col, T[r])


def _run_simplex(T: np.ndarray, basis: list[int], ncols: int, max_pivots: int) -> int:
    """Minimise the objective held in the last row of ``T``.

    The last row stores reduced costs and ``-objective`` in the rhs slot.
    Pricing is largest-coefficient (lowest index on ties) until a run of
    degenerate pivots appears; from then on Bland's rule is used, which
    cannot cycle.  Returns the number of pivots made.
    """
    rows = T.shape[0] - 1
    pivots = 0
    degenerate = 0
    while pivots < max_pivots:
        rc = T[-1, :ncols]
        if degenerate >= DEGENERATE_RUN:
            neg = np.flatnonzero(rc < -COST_TOL)
            if neg.size == 0:
                return pivots
            c = int(neg[0])
        else:
            c = int(np.argmin(rc))
            if rc[c] >= -COST_TOL:
                return pivots
        col = T[:rows, c]
        ok = col > PIVOT_TOL
        if not ok.any():
            raise ArithmeticError("unbounded direction in a bounded LP")
        ratios = np.full(rows, np.inf)
        ratios[ok] = T[:rows, -1][ok] / col[ok]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + 1e-14 * max(1.0, abs(best)))
        r = min(ties, key=lambda i: basis[i])
        degenerate = degenerate + 1 if best <= 1e-14 else 0
        _pivot(T, int(r), c)
        basis[int(r)] = c
        pivots += 1
    raise ArithmeticError("simplex pivot budget exhausted")


def simplex_solve(A: np.ndarray, b: np.ndarray, c: np.ndarray, maximize: bool = True,
                  max_pivots: int = 50000) -> LPResult:
    """Solve ``opt c.x`` s.t. ``A x = b``, ``x >= 0`` by a two-phase tableau.

    Rows are scaled to unit max-norm and flipped so ``b >= 0``; phase one adds
    one artificial per row and accepts a residual of at most ``FEAS_TOL``.  The
    final basis is re-solved directly and the reduced costs are rechecked.
    """
    A = np.array(A, dtype=float)
    b = np.array(b, dtype=float)
    c = np.array(c, dtype=float)
    A0 = A.copy()
    rows, n = A.shape
    scale = np.maximum(np.abs(A).max(axis=1), np.abs(b))
    scale[scale == 0] = 1.0
    A /= scale[:, None]
    b = b / scale
    flip = b < 0
    A[flip] *= -1
    b[flip] *= -1
    cost = -c if maximize else c.copy()
    cscale = max(np.abs(cost).max(initial=0.0), 1e-300)
    cost /= cscale

    # phase one
    T = np.zeros((rows + 1, n + rows + 1))
    T[:rows, :n] = A
    T[:rows, n:n + rows] = np.eye(rows)
    T[:rows, -1] = b
    T[-1, :n] = -A.sum(axis=0)
    T[-1, -1] = -b.sum()
    basis = list(range(n, n + rows))
    pivots = _run_simplex(T, basis, n + rows, max_pivots)
    if -T[-1, -1] > FEAS_TOL * rows:
        raise OracleInfeasible(f"phase-one residual {-T[-1, -1]:.3e}")

    # drive remaining artificials out of the basis; drop redundant rows
    keep = []
    for r in range(rows):
        if basis[r] >= n:
            cand = np.flatnonzero(np.abs(T[r, :n]) > 1e-9)
            if cand.size:
                _pivot(T, r, int(cand[0]))
                basis[r] = int(cand[0])
                pivots += 1
                keep.append(r)
        else:
            keep.append(r)
    T = np.vstack([T[keep][:, list(range(n)) + [n + rows]], np.zeros((1, n + 1))])
    basis = [basis[r] for r in keep]

    # phase two
    def price(T, basis):
        cb = cost[basis]
        T[-1, :n] = cost - cb @ T[:-1, :n]
        T[-1, -1] = -cb @ T[:-1, -1]

    price(T, basis)
    for _ in range(4):
        pivots += _run_simplex(T, basis, n, max_pivots - pivots)
        # refactor from the original data to shed accumulated round-off
        B = A[keep][:, basis]
        try:
            xb = np.linalg.solve(B, b[keep])
            Binv_A = np.linalg.solve(B, A[keep])
        except np.linalg.LinAlgError:
            break
        T[:-1, :n] = Binv_A
        T[:-1, -1] = xb
        price(T, basis)
        if T[-1, :n].min(initial=0.0) >= -COST_TOL and xb.min(initial=0.0) >= -FEAS_TOL:
            break
    x = np.zeros(n)
    x[basis] = np.clip(T[:-1, -1], 0.0, None)
    value = float(c @ x)
    duals, *_ = np.linalg.lstsq(A0[:, basis].T, c[basis], rcond=None)
    return LPResult(value, x, tuple(basis), pivots, duals)


def _lp_data(p: ProblemSpec, X: np.ndarray):
    F, g, valid = p.image(X)
    if not valid.any():
        raise OracleInfeasible("no grid point lies in the expression domain")
    X, F, g = X[valid], F[valid], g[valid]
    A = np.vstack([np.ones(len(X)), F.T])
    b = np.concatenate([[1.0], p.phi])
    return X, A, b, g


def lp_bound_points(p: ProblemSpec, X: np.ndarray, direction: str | None = None):
    """:func:`lp_bound` on a raw ``(N, n)`` array of points."""
    direction = direction or p.direction
    X = np.asarray(X, dtype=float).reshape(-1, p.dim)
    X, A, b, g = _lp_data(p, X)
    if len(X) < 1:
        raise ValueError("empty grid")
    res = simplex_solve(A, b, g, maximize=(direction == UPPER))
    w = res.x
    support = np.flatnonzero(w > 0)
    mu = DiscreteMeasure.normalized(X[support], w[support])
    return res.value, mu


def lp_bound(p: ProblemSpec, grid: FinitePoints, direction: str | None = None):
    """Best value of ``E[g]`` over measures on ``grid`` meeting the constraints.

    Returns ``(value, measure)``; the measure is a basic optimal solution with
    at most ``m + 1`` atoms.  Raises :class:`OracleInfeasible` when ``phi`` is
    outside the hull of the grid image.
    """
    if len(grid.points) == 0:
        raise ValueError("empty grid")
    return lp_bound_points(p, grid.as_array(), direction)


def enumerate_bound(p: ProblemSpec, grid: FinitePoints, k: int, direction: str | None = None) -> float:
    """Brute-force extremum over all grid measures with at most ``k`` atoms.

    Each support subset gets a least-squares solve of the moment system; the
    subset counts when the solution is nonnegative with a residual below
    ``1e-10``.  Subsets larger than ``m + 1`` add nothing, since every vertex
    of the feasible polytope has at most ``m + 1`` atoms, so they are skipped.
    """
    direction = direction or p.direction
    if len(grid.points) > 25 or k > p.m + 2 or k < 1:
        raise ValueError("enumeration guard: need at most 25 points and 1 <= k <= m + 2")
    X, A, b, g = _lp_data(p, grid.as_array())
    sgn = 1.0 if direction == UPPER else -1.0
    best = -math.inf
    for size in range(1, min(k, p.m + 1) + 1):
        for sub in itertools.combinations(range(len(X)), size):
            cols = list(sub)
            w, *_ = np.linalg.lstsq(A[:, cols], b, rcond=None)
            if w.min() < -1e-12:
                continue
            if np.abs(A[:, cols] @ w - b).max() > 1e-10 * (1 + np.abs(b).max()):
                continue
            best = max(best, sgn * float(g[cols] @ w))
    if best == -math.inf:
        raise OracleInfeasible("no feasible grid measure")
    return sgn * best
