"""Closed-form bounds for mean/variance problems on the line.

These are exact reference values for the numerical solver and fast paths in
their own right.  Functions of ``x`` may be passed as a parsed one-dimensional
:class:`~hullbounds.expr.Expr` or as a plain callable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
from scipy.optimize import minimize_scalar

from .expr import Expr, eval_expr
from .model import LOWER, UPPER, DiscreteMeasure

__all__ = [
    "JensenBounds", "ThreePointParam", "variance_range", "jensen_gap_bounds",
    "mgf_bounds", "mgf_interval_bounds", "power_mean_bounds", "three_point_atoms",
    "three_point_extremize", "markov_bound", "jarzynski_bound",
]

Scalar = Callable[[float], float]


def _as_function(g: Union[Expr, Scalar]) -> Scalar:
    if callable(g):
        return g
    return lambda x: eval_expr(g, (x,))


def variance_range(a: float, b: float, lam: float) -> tuple[float, float]:
    """Range of ``Var X`` over laws on ``[a, b]`` with mean ``lam``."""
    if not a < lam < b:
        raise ValueError(f"mean {lam} must lie strictly inside ({a}, {b})")
    return 0.0, (b - lam) * (lam - a)


@dataclass(frozen=True)
class JensenBounds:
    lower: float
    upper: float
    mu_lower: DiscreteMeasure
    mu_upper: DiscreteMeasure


def _two_point(end: float, lam: float, var: float) -> tuple[float, float, float]:
    """Atoms ``end`` and ``c`` with mean ``lam`` and variance ``var``; returns (c, w_end, w_c)."""
    d2 = (lam - end) ** 2
    c = lam + var / (lam - end)
    return c, var / (var + d2), d2 / (var + d2)


def _branch(g: Scalar, end: float, lam: float, var: float) -> tuple[float, DiscreteMeasure]:
    c, w_end, w_c = _two_point(end, lam, var)
    if abs(c - end) <= 1e-15 * (1 + abs(end)):
        # degenerate only when var is zero, which the caller excludes
        raise ValueError("atoms coincide")
    value = w_end * g(end) + w_c * g(c)
    atoms, weights = ((end,), (c,)), (w_end, w_c)
    if c < end:
        atoms, weights = atoms[::-1], weights[::-1]
    return value, DiscreteMeasure.normalized(atoms, weights)


def jensen_gap_bounds(g: Union[Expr, Scalar], a: float, b: float, lam: float, var: float,
                      derivative: str = "convex") -> JensenBounds:
    """Sharp range of ``E g(X)`` for ``X`` in ``[a, b]`` with given mean and variance.

    Requires ``g'`` strictly convex on ``[a, b]`` (not checked).  The lower
    bound puts mass on ``a`` and ``lam + var / (lam - a)``, the upper one on
    ``b`` and ``lam + var / (lam - b)``.  With ``derivative="concave"`` the
    two branches trade places, which is the same statement applied to ``-g``.
    """
    if derivative not in ("convex", "concave"):
        raise ValueError("derivative must be 'convex' or 'concave'")
    _, vmax = variance_range(a, b, lam)
    if not 0 < var <= vmax * (1 + 1e-12):
        raise ValueError(f"variance {var} outside (0, {vmax}]")
    f = _as_function(g)
    lo = _branch(f, a, lam, var)
    hi = _branch(f, b, lam, var)
    if derivative == "concave":
        lo, hi = hi, lo
    return JensenBounds(lo[0], hi[0], lo[1], hi[1])


def _exp_branch(lam: float, var: float, s: float, end: float) -> float:
    c, w_end, w_c = _two_point(end, lam, var)
    try:
        return w_end * math.exp(s * end) + w_c * math.exp(s * c)
    except OverflowError:
        return math.inf


def mgf_interval_bounds(lam: float, var: float, s: float, a: float) -> tuple[float, float]:
    """Range of ``E exp(sX)`` for ``X`` in ``[0, a]`` with mean ``lam``, variance ``var``."""
    if s == 0:
        raise ValueError("s must be nonzero")
    _, vmax = variance_range(0.0, a, lam)
    if not 0 < var <= vmax:
        raise ValueError(f"variance {var} outside (0, {vmax}]")
    at_zero = _exp_branch(lam, var, s, 0.0)
    at_a = _exp_branch(lam, var, s, a)
    return (at_zero, at_a) if s > 0 else (at_a, at_zero)


def mgf_bounds(lam: float, var: float, s: float) -> tuple[float, float]:
    """Range of ``E exp(sX)`` for ``X >= 0`` with mean ``lam`` and variance ``var``.

    For ``s > 0`` the upper end is ``inf``.  For ``s < 0`` the lower end is
    Jensen's ``exp(lam s)``, reached only in the limit of a vanishing far atom.
    """
    if s == 0:
        raise ValueError("s must be nonzero")
    if not (lam > 0 and var > 0):
        raise ValueError("need lam > 0 and var > 0")
    near = (var + lam * lam * math.exp((lam * lam + var) * s / lam)) / (var + lam * lam)
    if s > 0:
        return near, math.inf
    return math.exp(lam * s), near


def power_mean_bounds(lam: float, var: float, s: float) -> tuple[float, float | None]:
    """Range of ``M_s = (E X^s)^(1/s)`` for ``X > 0`` with mean ``lam``, variance ``var``.

    Returns ``(lower, upper)``; ``upper`` is None when no finite bound exists
    (``s > 2``).  For ``s < 0`` the lower end is 0.
    """
    if s == 0:
        raise ValueError("s must be nonzero")
    if not (lam > 0 and var > 0):
        raise ValueError("need lam > 0 and var > 0")
    if s == 1:
        return lam, lam
    if s == 2:
        m2 = math.sqrt(lam * lam + var)
        return m2, m2
    if s < 0:
        return 0.0, lam
    # log form: the two powers overflow separately as s -> 0
    m2 = var + lam * lam
    k = math.exp((1 - 1 / s) * math.log(m2) - (1 - 2 / s) * math.log(lam))
    if s < 1:
        return k, lam
    if s < 2:
        return lam, k
    return k, None


@dataclass(frozen=True)
class ThreePointParam:
    """Weights ``p`` in the open simplex, angle ``theta``, mean and standard deviation."""

    p: tuple[float, float, float]
    theta: float
    lam: float
    sigma: float

    def __post_init__(self):
        p = tuple(float(v) for v in self.p)
        object.__setattr__(self, "p", p)
        if len(p) != 3 or min(p) <= 0:
            raise ValueError("weights must be three positive numbers")
        if abs(sum(p) - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {sum(p)!r}, not 1")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")


def three_point_atoms(tp: ThreePointParam) -> tuple[float, float, float]:
    """Atoms ``(x_a, x_b, x_c)`` which, with weights ``tp.p``, have mean ``lam``
    and variance ``sigma**2`` for every angle."""
    pa, pb, pc = tp.p
    ab = pa + pb
    cos, sin = math.cos(tp.theta), math.sin(tp.theta)
    shift = sin * math.sqrt(pc)
    xa = tp.lam + tp.sigma * (cos * math.sqrt(pb / pa) + shift) / math.sqrt(ab)
    xb = tp.lam + tp.sigma * (-cos * math.sqrt(pa / pb) + shift) / math.sqrt(ab)
    xc = tp.lam - tp.sigma * sin * math.sqrt(ab / pc)
    return xa, xb, xc


_LOGIT_RANGE = 40.0
_PENALTY = 1e100    # finite stand-in for infeasible points; keeps Brent's arithmetic finite


def _softmax(u: np.ndarray) -> np.ndarray:
    z = np.exp(u - u.max())
    return z / z.sum()


def three_point_extremize(g: Union[Expr, Scalar], lam: float, var: float, direction: str = LOWER,
                          n_starts: int = 64, seed: int = 0, sweeps: int = 60,
                          tol: float = 1e-13) -> float:
    """Best three-atom value of ``E g(X)`` with mean ``lam`` and variance ``var``.

    Multistart coordinate descent over two softmax logits (the third is pinned
    at zero) and the angle, with a bounded Brent search per coordinate.  The
    result is attained by an actual measure, so it is an inner estimate of the
    sharp bound; a missed basin makes it loose, never invalid.  Points where
    ``g`` is undefined count as infeasible.
    """
    if direction not in (LOWER, UPPER):
        raise ValueError(f"direction must be {LOWER!r} or {UPPER!r}")
    if not var > 0:
        raise ValueError("variance must be positive")
    f = _as_function(g)
    sign = 1.0 if direction == LOWER else -1.0
    sigma = math.sqrt(var)

    def objective(z: np.ndarray) -> float:
        p = _softmax(np.array([z[0], z[1], 0.0]))
        if p.min() <= 0:
            return _PENALTY
        tp = ThreePointParam.__new__(ThreePointParam)
        object.__setattr__(tp, "p", tuple(p))
        object.__setattr__(tp, "theta", z[2])
        object.__setattr__(tp, "lam", lam)
        object.__setattr__(tp, "sigma", sigma)
        try:
            vals = [f(x) for x in three_point_atoms(tp)]
        except (ArithmeticError, ValueError):
            return _PENALTY
        v = sign * float(p @ np.array(vals))
        return v if math.isfinite(v) and abs(v) < _PENALTY else _PENALTY

    rng = np.random.default_rng(seed)
    starts = np.column_stack([rng.uniform(-3, 3, (n_starts, 2)), rng.uniform(0, 2 * math.pi, n_starts)])
    best = math.inf
    for z in starts:
        val = objective(z)
        for _ in range(sweeps):
            prev = val
            for i in range(3):
                if i < 2:
                    lo, hi = -_LOGIT_RANGE, _LOGIT_RANGE
                else:
                    lo, hi = z[2] - math.pi, z[2] + math.pi

                def along(t, i=i):
                    y = z.copy()
                    y[i] = t
                    return objective(y)

                r = minimize_scalar(along, bounds=(lo, hi), method="bounded",
                                    options={"xatol": 1e-12})
                if r.fun < val:
                    z[i], val = r.x, r.fun
            z[2] %= 2 * math.pi
            if prev - val <= tol * (1 + abs(val)):
                break
        if val < best:
            best = val
    if best >= _PENALTY:
        return sign * math.inf    # no start reached a finite value
    return sign * best


def markov_bound(lam: float, a: float) -> float:
    """Sharp lower bound on ``P(X <= a)`` for ``X >= 0`` with mean ``lam``."""
    if not (lam > 0 and a > 0):
        raise ValueError("need lam > 0 and a > 0")
    return max(1.0 - lam / a, 0.0)


def jarzynski_bound(a: float, lam: float) -> float:
    """Sharp upper bound on ``P(X >= lam)`` for ``X >= a`` with ``E exp(X) = 1``."""
    if not (a < 0 and lam > a):
        raise ValueError("need a < 0 and lam > a")
    return min(1.0, (1.0 - math.exp(a)) / (math.exp(lam) - math.exp(a)))
