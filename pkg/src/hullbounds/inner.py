"""Global maximisation of the Lagrangian over a bounded support stage.

For multipliers ``alpha`` and a sign ``s`` in {+1, -1} the inner problem is

    F_s(alpha) = sup_x  s * (g(x) + <alpha, f(x) - phi>).

A stage grid is evaluated once; each call then costs one pass over the cached
image plus a golden-section polish of the best local maxima.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .expr import DomainError, eval_many
from .model import Box, FinitePoints, IntervalUnion, ProblemSpec, stage_cells, stage_count

__all__ = ["StageGrid", "InnerResult", "InnerOptimizer", "build_stage_grid",
           "evaluate_inner", "subgradient_from", "tol_active"]

CHUNK = 4096
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def tol_active(value: float, rel: float = 1e-8) -> float:
    return rel * (1.0 + abs(value))


@dataclass(frozen=True)
class StageGrid:
    """Grid points of one stage with their axis neighbours.

    ``prev[i, d]`` / ``next[i, d]`` index the neighbouring grid point along
    axis ``d`` inside the same closed piece, or -1.
    """
    points: np.ndarray
    prev: np.ndarray
    next: np.ndarray
    lower: np.ndarray  # per-axis clip box for refinement
    upper: np.ndarray

    @property
    def size(self) -> int:
        return len(self.points)

    @property
    def diameter(self) -> float:
        if len(self.points) < 2:
            return 0.0
        return float(np.linalg.norm(self.points.max(axis=0) - self.points.min(axis=0)))

    def pieces(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Closed boxes making up the stage; empty for a finite support."""
        if np.all(self.prev == -1) and np.all(self.next == -1):
            return []
        if self.points.shape[1] > 1:
            return [(self.lower.copy(), self.upper.copy())]
        starts = np.flatnonzero(self.prev[:, 0] == -1)
        ends = np.flatnonzero(self.next[:, 0] == -1)
        return [(self.points[a].copy(), self.points[b].copy()) for a, b in zip(starts, ends)]


def _cell_grid(bps: Sequence[float], res: int) -> np.ndarray:
    if len(bps) == 1:
        return np.array([bps[0]], dtype=float)
    parts = [np.linspace(t0, t1, res)[:-1] for t0, t1 in zip(bps[:-1], bps[1:])]
    parts.append(np.array([bps[-1]], dtype=float))
    return np.concatenate(parts)


def _res_tuple(grid_res, dim: int) -> tuple[int, ...]:
    if np.isscalar(grid_res):
        res = (int(grid_res),) * dim
    else:
        res = tuple(int(r) for r in grid_res)
    if len(res) != dim or min(res) < 2:
        raise ValueError("grid_res needs one value >= 2 per dimension")
    return res


def build_stage_grid(p: ProblemSpec, stage: int, grid_res) -> StageGrid:
    s = p.support
    if isinstance(s, FinitePoints):
        X = s.as_array()
        none = np.full(X.shape, -1, dtype=int)
        return StageGrid(X, none, none.copy(), X.min(axis=0), X.max(axis=0))
    res = _res_tuple(grid_res, p.dim)
    if p.dim == 1:
        pieces = [_cell_grid(bps, res[0]) for bps in stage_cells(s, stage)]
        X = np.concatenate(pieces)[:, None]
        prev = np.arange(len(X)) - 1
        nxt = np.arange(len(X)) + 1
        start = 0
        for piece in pieces:
            prev[start] = -1
            nxt[start + len(piece) - 1] = -1
            start += len(piece)
        return StageGrid(X, prev[:, None], nxt[:, None], X.min(axis=0), X.max(axis=0))
    axes = []
    for d in range(p.dim):
        (bps,) = stage_cells(s, stage, d)
        axes.append(_cell_grid(bps, res[d]))
    mesh = np.meshgrid(*axes, indexing="ij")
    X = np.stack([m.ravel() for m in mesh], axis=1)
    shape = tuple(len(a) for a in axes)
    idx = np.arange(X.shape[0]).reshape(shape)
    prev = np.full(X.shape, -1, dtype=int)
    nxt = np.full(X.shape, -1, dtype=int)
    for d in range(p.dim):
        sl_hi = [slice(None)] * p.dim
        sl_lo = [slice(None)] * p.dim
        sl_hi[d] = slice(1, None)
        sl_lo[d] = slice(None, -1)
        prev[idx[tuple(sl_hi)].ravel(), d] = idx[tuple(sl_lo)].ravel()
        nxt[idx[tuple(sl_lo)].ravel(), d] = idx[tuple(sl_hi)].ravel()
    return StageGrid(X, prev, nxt, np.array([a[0] for a in axes]), np.array([a[-1] for a in axes]))


@dataclass(frozen=True)
class InnerResult:
    value: float
    maximizers: np.ndarray      # (k, n), lexicographically sorted
    f_image: np.ndarray         # (k, m), f(x) - phi at the maximizers
    g_values: np.ndarray        # (k,)
    evaluations: int
    skipped: int
    candidates: np.ndarray      # refined local maxima, best first
    candidate_image: np.ndarray
    candidate_g: np.ndarray
    sign: int = 1
    tol_active: float = 0.0


def subgradient_from(result: InnerResult, sign: int | None = None) -> np.ndarray:
    """``sign * (f(x*) - phi)`` at the lexicographically smallest maximiser."""
    if len(result.maximizers) == 0:
        raise ValueError("inner result has no maximiser")
    sign = result.sign if sign is None else sign
    return sign * result.f_image[0]


def _lexsort_rows(X: np.ndarray) -> np.ndarray:
    return np.lexsort(X.T[::-1])


class InnerOptimizer:
    """Cached grid image of one stage plus refinement machinery."""

    def __init__(self, p: ProblemSpec, stage: int = 0, grid_res=33, refine_iters: int = 2,
                 n_candidates: int = 8, golden_iters: int = 48, workers: int = 1,
                 tol_active_rel: float = 1e-8, grid: StageGrid | None = None):
        if stage >= stage_count(p.support):
            raise IndexError(f"stage {stage} outside schedule")
        self.p = p
        self.stage = stage
        self.refine_iters = refine_iters if not isinstance(p.support, FinitePoints) else 0
        self.n_candidates = n_candidates
        self.golden_iters = golden_iters
        self.tol_active_rel = tol_active_rel
        self.grid = grid if grid is not None else build_stage_grid(p, stage, grid_res)
        self.phi = p.phi
        self._evaluate_grid(workers)

    # -- grid image -------------------------------------------------------
    def _evaluate_grid(self, workers: int) -> None:
        X = self.grid.points
        chunks = [X[i:i + CHUNK] for i in range(0, len(X), CHUNK)]
        if workers > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                parts = list(pool.map(self.p.image, chunks))
        else:
            parts = [self.p.image(c) for c in chunks]
        F = np.concatenate([q[0] for q in parts])
        g = np.concatenate([q[1] for q in parts])
        valid = np.concatenate([q[2] for q in parts])
        if not valid.any():
            raise DomainError("every grid point falls outside the expression domain")
        self.valid = valid
        self.skipped = int((~valid).sum())
        self.Fc = np.where(valid[:, None], F - self.phi, 0.0)
        self.g = np.where(valid, g, 0.0)

    def image(self, X: np.ndarray):
        """``(f - phi, g, valid)`` at arbitrary points."""
        F, g, valid = self.p.image(X)
        return F - self.phi, g, valid

    def _signed(self, Fc, g, valid, alpha, sign):
        acc = g.copy()
        for j in range(Fc.shape[1]):
            acc += alpha[j] * Fc[:, j]
        acc *= sign
        acc[~valid] = -np.inf
        return acc

    # -- refinement --------------------------------------------------------
    def _local_maxima(self, vals: np.ndarray) -> np.ndarray:
        grid = self.grid
        is_max = np.isfinite(vals)
        for d in range(grid.points.shape[1]):
            pv = grid.prev[:, d]
            nv = grid.next[:, d]
            has_p = pv >= 0
            has_n = nv >= 0
            is_max &= ~has_p | (vals >= vals[np.where(has_p, pv, 0)])
            is_max &= ~has_n | (vals >= vals[np.where(has_n, nv, 0)])
        idx = np.flatnonzero(is_max)
        # best first, ties by grid index
        order = np.lexsort((idx, -vals[idx]))
        return idx[order[: self.n_candidates]]

    def _line_values(self, P, alpha, sign):
        Fc, g, valid = self.image(P)
        return self._signed(Fc, g, valid, alpha, sign)

    def _golden(self, P, d, lo, hi, alpha, sign):
        """Maximise along axis ``d`` in ``[lo, hi]`` for every row of ``P``."""
        a, b = lo.copy(), hi.copy()
        c = b - GOLDEN * (b - a)
        e = a + GOLDEN * (b - a)
        Pc, Pe = P.copy(), P.copy()
        Pc[:, d], Pe[:, d] = c, e
        fc = self._line_values(Pc, alpha, sign)
        fe = self._line_values(Pe, alpha, sign)
        best_x = np.where(fc >= fe, c, e)
        best_f = np.maximum(fc, fe)
        evals = 2 * len(P)
        for _ in range(self.golden_iters):
            left = fc >= fe
            b = np.where(left, e, b)
            a = np.where(left, a, c)
            new_e_for_left = c
            new_c_for_right = e
            c_new = np.where(left, b - GOLDEN * (b - a), new_c_for_right)
            e_new = np.where(left, new_e_for_left, a + GOLDEN * (b - a))
            fe_new = np.where(left, fc, np.nan)
            fc_new = np.where(left, np.nan, fe)
            probe = np.where(left, c_new, e_new)
            Pp = P.copy()
            Pp[:, d] = probe
            fp = self._line_values(Pp, alpha, sign)
            evals += len(P)
            fc = np.where(left, fp, fc_new)
            fe = np.where(left, fe_new, fp)
            c, e = c_new, e_new
            better = fp > best_f
            best_x = np.where(better, probe, best_x)
            best_f = np.where(better, fp, best_f)
        out = P.copy()
        out[:, d] = best_x
        return out, best_f, evals

    def _refine(self, starts: np.ndarray, alpha, sign):
        grid = self.grid
        P = grid.points[starts].copy()
        vals = self._last_vals[starts].copy()
        evals = 0
        dim = P.shape[1]
        # one sweep is exact along a single axis; extra rounds only help in n-D
        rounds = 1 if dim == 1 else self.refine_iters
        for _ in range(rounds):
            for d in range(dim):
                pv = grid.prev[starts, d]
                nv = grid.next[starts, d]
                x0 = grid.points[starts, d]
                lo_n = np.where(pv >= 0, grid.points[np.maximum(pv, 0), d], x0)
                hi_n = np.where(nv >= 0, grid.points[np.maximum(nv, 0), d], x0)
                if dim == 1:
                    lo, hi = lo_n, hi_n  # never leave the closed piece
                else:
                    lo = np.maximum(P[:, d] - (x0 - lo_n), grid.lower[d])
                    hi = np.minimum(P[:, d] + (hi_n - x0), grid.upper[d])
                move = hi > lo
                if not move.any():
                    continue
                Q, fq, ne = self._golden(P[move], d, lo[move], hi[move], alpha, sign)
                evals += ne
                improve = fq > vals[move]
                sub = np.flatnonzero(move)[improve]
                P[sub] = Q[improve]
                vals[sub] = fq[improve]
        return P, vals, evals

    # -- public ------------------------------------------------------------
    def evaluate(self, alpha, sign: int = 1, tol: float | None = None) -> InnerResult:
        alpha = np.asarray(alpha, dtype=float).reshape(self.p.m)
        sign = 1 if sign >= 0 else -1
        vals = self._signed(self.Fc, self.g, self.valid, alpha, sign)
        self._last_vals = vals
        evals = int(self.valid.sum())
        starts = self._local_maxima(vals)
        if self.refine_iters > 0 and len(starts):
            P, pv, ne = self._refine(starts, alpha, sign)
            evals += ne
        else:
            P, pv = self.grid.points[starts], vals[starts]
        value = float(max(vals.max(), pv.max(initial=-np.inf)))
        if not math.isfinite(value):
            raise DomainError("no finite Lagrangian value on the stage")
        if tol is None:
            tol = tol_active(value, self.tol_active_rel)
        on_grid = np.flatnonzero(vals >= value - tol)
        keep = pv >= value - tol
        M = np.vstack([self.grid.points[on_grid], P[keep]])
        M, uniq = np.unique(M, axis=0, return_index=True)
        # np.unique sorts rows lexicographically
        Fc, g, _ = self.image(M)
        order = np.lexsort((np.arange(len(P)), -pv))
        cand = P[order]
        cFc, cg, _ = self.image(cand)
        return InnerResult(value, M, Fc, g, evals, self.skipped, cand, cFc, cg, sign, tol)

    def signed_values(self, alpha, sign: int = 1) -> np.ndarray:
        """``sign * G`` on the cached grid (``-inf`` where undefined)."""
        alpha = np.asarray(alpha, dtype=float).reshape(self.p.m)
        return self._signed(self.Fc, self.g, self.valid, alpha, 1 if sign >= 0 else -1)


def evaluate_inner(p: ProblemSpec, alpha, sign: int = 1, grid_res=33, refine_iters: int = 2,
                   stage: int = 0, workers: int = 1, **kw) -> InnerResult:
    """One-shot :meth:`InnerOptimizer.evaluate` on stage ``stage``."""
    return InnerOptimizer(p, stage, grid_res, refine_iters, workers=workers, **kw).evaluate(alpha, sign)
