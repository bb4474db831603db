import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hullbounds.dual import (BOUNDARY, FEASIBLE, INFEASIBLE, NONCONVERGENCE, OK, ProblemError,
                             SolverParams, check_feasibility, extrapolate_limit, loose_bound,
                             solve_dual)
from hullbounds.expr import parse_expr
from hullbounds.inner import InnerOptimizer
from hullbounds.model import (Box, Exclusion, FinitePoints, ProblemSpec, TruncationSchedule,
                              measure_expectation)
from hullbounds.oracle import lp_bound

E = math.e


def _p(dim, support, cons, g, direction="upper"):
    P = lambda t: parse_expr(t, dim)
    return ProblemSpec(dim, support, tuple((P(f), phi) for f, phi in cons), P(g), direction)


def two_variable(direction="upper"):
    return _p(2, Box((-1, -1), (1, 1)), [("x1", 0.0), ("x1*x2", 0.5)], "exp(x1) + exp(x2)",
              direction)


def markov(lam=1.0, a=2.0, stages=11):
    sched = TruncationSchedule(1.0, 2.0, stages, (Exclusion(a, "right"),))
    return _p(1, Box((0,), (math.inf,), schedule=sched), [("x1", lam)], f"step({a} - x1)", "lower")


# -- feasibility --------------------------------------------------------------

def test_interior_target_is_feasible():
    rep = check_feasibility(_p(2, Box((-1, -1), (1, 1)), [("x1", 0.0), ("x1*x2", 0.5)], "x1"))
    assert rep.status == FEASIBLE and rep.margin > 0.1


def test_exterior_target_has_separating_direction():
    rep = check_feasibility(_p(1, Box((0,), (1,)), [("x1", 2.0)], "x1"))
    assert rep.status == INFEASIBLE
    assert rep.alpha[0] < 0
    xs = np.linspace(0, 1, 33)
    assert np.all(rep.alpha[0] * (xs - 2.0) > rep.epsilon)


def test_endpoint_target_is_boundary():
    assert check_feasibility(_p(1, Box((0,), (1,)), [("x1", 1.0)], "x1")).status == BOUNDARY
    assert check_feasibility(_p(1, Box((0,), (1,)), [("x1", 1 + 1e-9)], "x1")).status == BOUNDARY


def test_feasibility_grid_too_small():
    with pytest.raises(ValueError):
        check_feasibility(_p(1, FinitePoints(((0.0,), (1.0,))), [("x1", 0.5)], "x1"))


# -- solve_dual examples -------------------------------------------------------

def test_variance_upper():
    r = solve_dual(_p(1, Box((0,), (1,)), [("x1", 0.3)], "x1^2"))
    assert r.status == OK
    assert r.bound == pytest.approx(0.3, abs=1e-7)
    assert {round(a[0], 6) for a in r.measure.atoms} == {0.0, 1.0}


def test_jarzynski_upper():
    a, lam = -3.0, 0.5
    p = _p(1, Box((a,), (10,), breakpoints=(lam,)), [("exp(x1)", 1.0)], f"step(x1 - {lam})")
    r = solve_dual(p)
    assert r.bound == pytest.approx((1 - math.exp(a)) / (math.exp(lam) - math.exp(a)), abs=1e-7)
    assert r.certificate.alpha[0] == pytest.approx(1 / (math.exp(a) - math.exp(lam)), abs=1e-4)


def test_two_variable_upper():
    r = solve_dual(two_variable(), SolverParams(grid_res=65))
    assert r.bound == pytest.approx(5 * E / 4 + 3 / (4 * E), abs=1e-6)
    np.testing.assert_allclose(r.certificate.alpha, [1 / E - E, (E - 1 / E) / 2], atol=1e-3)
    assert r.check.bound_gap <= 1e-6


def test_infeasible_problem_reports_status():
    r = solve_dual(_p(1, Box((0,), (1,)), [("x1", 2.0)], "x1^2"))
    assert r.status == INFEASIBLE
    assert r.bound == -math.inf and r.certificate is None
    r = solve_dual(_p(1, Box((0,), (1,)), [("x1", 2.0)], "x1^2", "lower"))
    assert r.bound == math.inf


def test_boundary_problem_is_refused():
    r = solve_dual(_p(1, Box((0,), (1,)), [("x1", 1.0)], "x1^2"))
    assert r.status == BOUNDARY and r.certificate is None


def test_invalid_problem_raises():
    with pytest.raises(ProblemError):
        solve_dual(_p(1, Box((0,), (math.inf,)), [("x1", 1.0)], "x1^2"))


def test_iteration_budget_flags_nonconvergence():
    r = solve_dual(two_variable(), SolverParams(outer_iters=2, grid_res=33, recover=False))
    assert r.status == NONCONVERGENCE
    assert r.bound >= 5 * E / 4 + 3 / (4 * E) - 1e-9


def test_unbounded_upper_diverges():
    p = _p(1, Box((0,), (math.inf,), schedule=TruncationSchedule(1.0, 2.0, 12)),
           [("x1", 1.0), ("x1^2", 2.0)], "exp(x1)")
    r = solve_dual(p, SolverParams(recover=False))
    assert r.diverged and r.bound == math.inf


# -- loose bounds --------------------------------------------------------------

def test_loose_bound_at_zero_is_sup():
    p = _p(1, Box((0,), (1,)), [("x1", 0.3)], "x1^2")
    assert loose_bound(p, [0.0]) == 1.0


def test_loose_bound_at_optimum_is_sharp():
    p = two_variable()
    r = solve_dual(p, SolverParams(grid_res=33, recover=False))
    assert loose_bound(p, r.certificate.alpha) == pytest.approx(r.stage_bound, abs=1e-9)


def test_loose_bound_markov_hyperplane():
    a, lam = 2.0, 1.0
    p = markov(lam, a)
    # the line through (0, 1) and (a, 0) in the (x, g) plane
    assert loose_bound(p, [1 / a], stage=10) == pytest.approx(1 - lam / a, abs=2e-3)


@settings(max_examples=25, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5))
def test_loose_bound_is_valid(a1, a2):
    p = two_variable()
    assert loose_bound(p, [a1, a2]) >= 5 * E / 4 + 3 / (4 * E) - 1e-12
    lower = loose_bound(two_variable("lower"), [a1, a2])
    assert lower <= 5 * E / 4 + 3 / (4 * E)


# -- properties ----------------------------------------------------------------

def _finite_problem(seed, direction):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 3))
    X = rng.uniform(-1, 1, (int(rng.integers(6, 40)), 1))
    fs = ["x1", "x1^2"][:m]
    F = np.column_stack([X[:, 0], X[:, 0] ** 2])[:, :m]
    phi = rng.dirichlet(np.ones(len(X))) @ F
    grid = FinitePoints(tuple(map(tuple, X)))
    return _p(1, grid, list(zip(fs, phi)), "exp(x1) + x1^3", direction), grid


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from(["lower", "upper"]))
def test_finite_support_matches_oracle_and_weak_duality(seed, direction):
    p, grid = _finite_problem(seed, direction)
    if check_feasibility(p).status != FEASIBLE:
        return
    r = solve_dual(p)
    value, mu = lp_bound(p, grid)
    assert r.bound == pytest.approx(value, abs=1e-7)
    eg = measure_expectation(mu, p.objective)
    opt = InnerOptimizer(p)
    sign = 1 if direction == "upper" else -1
    for _, alpha, _ in r.history:
        dual_value = sign * opt.evaluate(alpha, sign).value
        assert sign * (dual_value - eg) >= -1e-9


def test_best_values_are_monotone():
    r = solve_dual(two_variable(), SolverParams(grid_res=33, recover=False))
    vals = [v for k, _, v in r.history]
    best = np.minimum.accumulate(vals)
    assert np.all(np.diff(best) <= 0)
    assert best[-1] == pytest.approx(r.stage_bound, abs=1e-12)


def test_markov_stage_values_are_monotone():
    r = solve_dual(markov(), SolverParams(stage_policy="all", recover=False))
    vals = [s.bound for s in r.stages if s.bound is not None]
    assert len(vals) >= 8
    assert np.all(np.diff(vals) <= 1e-9)
    assert vals[-1] == pytest.approx(0.5, abs=5e-3)


def test_markov_trivial_regime():
    r = solve_dual(markov(lam=3.0), SolverParams(recover=False))
    assert r.bound == pytest.approx(0.0, abs=1e-6)


def test_extrapolate_limit():
    ks = np.arange(1, 9)
    assert extrapolate_limit(0.5 - 2.0 ** -ks) == pytest.approx(0.5, abs=1e-12)
    assert extrapolate_limit([1.0, 1.0, 1.0]) == 1.0
    assert extrapolate_limit([3.0, 2.0]) == 2.0
    # an estimate on the wrong side of a monotone sequence falls back to the last term
    assert extrapolate_limit([0.0, 1.0, 1.5, 1.6], increasing=False) == 1.6
