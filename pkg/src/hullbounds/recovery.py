"""Witness measures from a converged dual certificate."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares, nnls

from .inner import InnerOptimizer
from .model import DiscreteMeasure, ProblemSpec, UPPER, measure_expectation

__all__ = ["RecoveryError", "Unmatchable", "CertificateCheck", "cluster_points",
           "active_points", "match_moments", "caratheodory_reduce",
           "verify_certificate", "polish_atoms"]

TOL_MOMENTS = 1e-7


class RecoveryError(RuntimeError):
    """The certificate has no active points on the inner grid."""


class Unmatchable(RuntimeError):
    """No measure on the given points matches the constraint values."""


def cluster_points(points: np.ndarray, scores: np.ndarray, radius: float) -> np.ndarray:
    """Greedy clustering: best-scoring point first, absorb everything within ``radius``.

    Returns indices of the kept representatives, sorted lexicographically.
    """
    order = np.lexsort((np.arange(len(points)), -scores))
    taken = np.zeros(len(points), dtype=bool)
    keep = []
    for i in order:
        if taken[i]:
            continue
        keep.append(i)
        taken |= np.linalg.norm(points - points[i], axis=1) <= radius
    keep = np.array(keep, dtype=int)
    return keep[np.lexsort(points[keep].T[::-1])]


def active_points(p: ProblemSpec, cert, tol_active: float | None = None, grid_res=33,
                  refine_iters: int = 2, merge_rel: float = 1e-6,
                  optimizer: InnerOptimizer | None = None) -> np.ndarray:
    """Points where the certificate hyperplane touches the graph of ``g``.

    ``tol_active`` is an absolute slack on the Lagrangian; by default the
    optimizer's relative tolerance applies.

    Near-duplicates closer than ``merge_rel`` times the stage diameter are
    merged, keeping the point with the larger Lagrangian value.
    """
    sign = 1 if cert.direction == UPPER else -1
    opt = optimizer or InnerOptimizer(p, cert.stage, grid_res, refine_iters)
    res = opt.evaluate(cert.alpha, sign, tol=tol_active)
    if len(res.maximizers) == 0:
        raise RecoveryError("no active points: the inner grid is too coarse")
    scores = sign * (res.g_values + res.f_image @ np.asarray(cert.alpha, dtype=float))
    keep = cluster_points(res.maximizers, scores, merge_rel * max(opt.grid.diameter, 1e-300))
    return res.maximizers[keep]


def _moment_system(points: np.ndarray, p: ProblemSpec):
    F, _, valid = p.image(points)
    if not valid.all():
        raise Unmatchable("a candidate atom lies outside the expression domain")
    A = np.vstack([np.ones(len(points)), F.T])
    b = np.concatenate([[1.0], p.phi])
    return A, b


def caratheodory_reduce(A: np.ndarray, b: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Move along null directions of ``A`` until at most ``rank(A)`` weights are positive."""
    w = w.copy()
    while True:
        supp = np.flatnonzero(w > 0)
        sub = A[:, supp]
        if len(supp) <= np.linalg.matrix_rank(sub):
            return w
        _, _, vt = np.linalg.svd(sub)
        v = vt[-1]
        if v.max() <= 0:
            v = -v
        pos = v > 1e-14 * np.abs(v).max()
        t = np.min(w[supp][pos] / v[pos])
        step = w[supp] - t * v
        # the limiting weight hits zero exactly
        j = np.flatnonzero(pos)[np.argmin(w[supp][pos] / v[pos])]
        step[j] = 0.0
        w[supp] = np.clip(step, 0.0, None)


def match_moments(points, p: ProblemSpec, tol_moments: float = TOL_MOMENTS) -> DiscreteMeasure:
    """Nonnegative weights on ``points`` reproducing ``sum w = 1`` and ``E f = phi``.

    The row-scaled system is solved by nonnegative least squares, reduced to
    a basic solution and pruned.  Raises :class:`Unmatchable` if any moment
    row misses its target by more than ``tol_moments``.
    """
    points = np.asarray(points, dtype=float).reshape(-1, p.dim)
    if len(points) == 0:
        raise Unmatchable("no points")
    A, b = _moment_system(points, p)
    scale = np.maximum(np.abs(A).max(axis=1), np.abs(b))
    scale[scale == 0] = 1.0
    w, _ = nnls(A / scale[:, None], b / scale, maxiter=50 * A.shape[1] + 100)
    if np.abs(A @ w - b).max() > tol_moments:
        raise Unmatchable(f"moment residual {np.abs(A @ w - b).max():.3e} above {tol_moments:g}")
    w = caratheodory_reduce(A / scale[:, None], b / scale, w)
    w[w < 1e-15 * w.max()] = 0.0
    supp = np.flatnonzero(w > 0)
    mu = DiscreteMeasure.normalized(points[supp], w[supp])
    resid = np.abs(A[:, supp] @ np.array(mu.weights) - b).max()
    if resid > tol_moments:
        raise Unmatchable(f"moment residual {resid:.3e} above {tol_moments:g} after pruning")
    return mu


def polish_atoms(p: ProblemSpec, mu: DiscreteMeasure, pieces, merge_radius: float,
                 tol_moments: float = TOL_MOMENTS) -> DiscreteMeasure | None:
    """Move interior atoms so that the moments hold exactly.

    A grid measure straddles each continuous contact point with two nearby
    atoms.  Atoms of one piece closer than ``merge_radius`` are merged at their
    weighted mean; then atom coordinates that are not on a piece boundary and
    all weights are adjusted by bounded least squares on the moment residual.
    ``pieces`` is a list of closed boxes ``(lo, hi)``; atoms outside every
    piece, and all atoms when ``pieces`` is empty, stay fixed.  Returns None
    if the residual stays above ``tol_moments``.
    """
    X = mu.as_array()
    w = np.array(mu.weights, dtype=float)
    piece = np.full(len(X), -1)
    for j, (lo, hi) in enumerate(pieces):
        inside = np.all((X >= lo - 1e-12 * (1 + np.abs(lo))) & (X <= hi + 1e-12 * (1 + np.abs(hi))), axis=1)
        piece[(piece == -1) & inside] = j

    # merge near neighbours within a piece, heaviest first
    order = np.argsort(-w, kind="stable")
    used = np.zeros(len(X), dtype=bool)
    atoms, weights, owner = [], [], []
    for i in order:
        if used[i]:
            continue
        near = ~used & (piece == piece[i]) & (np.linalg.norm(X - X[i], axis=1) <= merge_radius)
        if piece[i] == -1:
            near = np.zeros(len(X), dtype=bool)
            near[i] = True
        used |= near
        wt = w[near].sum()
        atoms.append((w[near] @ X[near]) / wt)
        weights.append(wt)
        owner.append(piece[i])
    atoms = np.array(atoms)
    weights = np.array(weights)

    free = np.zeros(atoms.shape, dtype=bool)
    lo_b = np.full(atoms.shape, -np.inf)
    hi_b = np.full(atoms.shape, np.inf)
    for a, j in enumerate(owner):
        if j < 0:
            continue
        lo, hi = pieces[j]
        eps = 1e-12 * (1 + np.abs(lo) + np.abs(hi))
        free[a] = (atoms[a] > lo + eps) & (atoms[a] < hi - eps)
        lo_b[a], hi_b[a] = lo, hi
    b = np.concatenate([[1.0], p.phi])
    k = len(atoms)

    def unpack(z):
        Y = atoms.copy()
        Y[free] = z[k:]
        return Y, z[:k]

    def residual(z):
        Y, wt = unpack(z)
        F, _, valid = p.image(Y)
        if not valid.all():
            return np.full(len(b), 1e6)
        A = np.vstack([np.ones(k), F.T])
        return (A @ wt - b) / (1 + np.abs(b))

    z0 = np.concatenate([weights, atoms[free]])
    lb = np.concatenate([np.zeros(k), lo_b[free]])
    ub = np.concatenate([np.ones(k), hi_b[free]])
    z0 = np.clip(z0, lb, ub)
    try:
        sol = least_squares(residual, z0, bounds=(lb, ub), xtol=1e-15, ftol=1e-15, gtol=1e-15,
                            max_nfev=200 * (len(z0) + 1))
    except ValueError:
        return None
    Y, wt = unpack(sol.x)
    keep = np.flatnonzero(wt > 0)
    if keep.size == 0:
        return None
    keep = keep[np.lexsort(Y[keep].T[::-1])]
    try:
        out = DiscreteMeasure.normalized(Y[keep], wt[keep])
    except ValueError:
        return None
    A, bb = _moment_system(out.as_array(), p)
    if np.abs(A @ np.array(out.weights) - bb).max() > tol_moments:
        return None
    return out


@dataclass(frozen=True)
class CertificateCheck:
    bound_gap: float            # |E_mu[g] - bound|
    max_violation: float        # max_j |E_mu[f_j] - phi_j|
    max_hyperplane_residual: float  # max over atoms of |G(x; alpha) - bound|
    expectation: float


def verify_certificate(p: ProblemSpec, cert, mu: DiscreteMeasure) -> CertificateCheck:
    """How closely the witness attains the certified bound."""
    eg = measure_expectation(mu, p.objective)
    viol = max(abs(measure_expectation(mu, f) - phi) for f, phi in p.constraints)
    X = mu.as_array()
    F, g, _ = p.image(X)
    G = g + (F - p.phi) @ np.asarray(cert.alpha, dtype=float)
    resid = float(np.abs(G - cert.bound).max())
    return CertificateCheck(abs(eg - cert.bound), float(viol), resid, eg)
