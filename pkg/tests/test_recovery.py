import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hullbounds.dual import DualCertificate, SolverParams, solve_dual
from hullbounds.expr import parse_expr
from hullbounds.model import Box, DiscreteMeasure, ProblemSpec
from hullbounds.recovery import (Unmatchable, active_points, caratheodory_reduce, cluster_points,
                                 match_moments, polish_atoms, verify_certificate)

E = math.e
BOUND_63 = 5 * E / 4 + 3 / (4 * E)
ALPHA_63 = np.array([1 / E - E, (E - 1 / E) / 2])


def _p(dim, support, cons, g, direction="upper"):
    P = lambda t: parse_expr(t, dim)
    return ProblemSpec(dim, support, tuple((P(f), phi) for f, phi in cons), P(g), direction)


def two_variable():
    return _p(2, Box((-1, -1), (1, 1)), [("x1", 0.0), ("x1*x2", 0.5)], "exp(x1) + exp(x2)")


def _cert(p, alpha, bound, stage=0):
    return DualCertificate(np.asarray(alpha, float), bound, p.direction, np.empty((0, p.dim)),
                           stage, 1e-9, _phi=p.phi)


def test_active_points_of_the_exact_certificate():
    p = two_variable()
    pts = active_points(p, _cert(p, ALPHA_63, BOUND_63), tol_active=1e-9)
    assert pts.tolist() == [[-1.0, -1.0], [-1.0, 1.0], [1.0, 1.0]]


def test_active_points_fourth_moment():
    p = _p(1, Box((-2,), (2,)), [("x1", 0.0), ("x1^2", 1.0)], "x1^4", "lower")
    # x^4 - 2 x^2 touches its minimum -1 at +-1; Lower uses -G
    cert = _cert(p, [0.0, -2.0], 1.0)
    pts = active_points(p, cert, tol_active=1e-9)
    np.testing.assert_allclose(pts.ravel(), [-1.0, 1.0], atol=1e-7)


def test_match_moments_two_variable():
    p = two_variable()
    mu = match_moments([[-1, -1], [-1, 1], [1, 1]], p)
    np.testing.assert_allclose(mu.weights, [0.25, 0.25, 0.5], atol=1e-12)


def test_match_moments_two_point_weights():
    a, lam, var = 0.0, 1.0, 0.5
    c = lam + var / (lam - a)
    p = _p(1, Box((0,), (3,)), [("x1", lam), ("x1^2", lam ** 2 + var)], "exp(x1)", "lower")
    mu = match_moments([[a], [c]], p)
    d2 = (lam - a) ** 2
    np.testing.assert_allclose(mu.weights, [var / (var + d2), d2 / (var + d2)], atol=1e-12)


def test_match_moments_point_mass():
    p = _p(1, Box((0,), (1,)), [("x1", 0.4)], "x1")
    mu = match_moments([[0.4]], p)
    assert mu.atoms == ((0.4,),) and mu.weights == (1.0,)


def test_unmatchable():
    p = _p(1, Box((0,), (1,)), [("x1", 0.4)], "x1")
    with pytest.raises(Unmatchable):
        match_moments([[0.5], [0.9]], p)
    with pytest.raises(Unmatchable):
        match_moments(np.empty((0, 1)), p)


def test_match_moments_prunes_to_a_vertex():
    p = _p(1, Box((0,), (1,)), [("x1", 0.5)], "x1")
    mu = match_moments(np.linspace(0, 1, 11)[:, None], p)
    assert len(mu.atoms) <= 2
    assert sum(w * a[0] for a, w in zip(mu.atoms, mu.weights)) == pytest.approx(0.5, abs=1e-12)


def test_verify_exact_witness():
    p = two_variable()
    mu = DiscreteMeasure.normalized(((-1, -1), (-1, 1), (1, 1)), (0.25, 0.25, 0.5))
    chk = verify_certificate(p, _cert(p, ALPHA_63, BOUND_63), mu)
    assert chk.bound_gap <= 1e-7
    assert chk.max_violation <= 1e-15
    assert chk.max_hyperplane_residual <= 1e-12


def test_verify_reports_perturbed_weights():
    p = two_variable()
    mu = DiscreteMeasure.normalized(((-1, -1), (-1, 1), (1, 1)), (0.3, 0.25, 0.5))
    assert verify_certificate(p, _cert(p, ALPHA_63, BOUND_63), mu).max_violation > 1e-3


def test_verify_closed_form_witness():
    from hullbounds.closed_forms import jensen_gap_bounds
    a, b, lam, var = 0.0, 2.0, 0.8, 0.5
    g = parse_expr("exp(x1)", 1)
    jb = jensen_gap_bounds(g, a, b, lam, var)
    p = _p(1, Box((a,), (b,)), [("x1", lam), ("x1^2", lam ** 2 + var)], "exp(x1)", "lower")
    chk = verify_certificate(p, _cert(p, [0.0, 0.0], jb.lower), jb.mu_lower)
    assert chk.bound_gap <= 1e-9 and chk.max_violation <= 1e-12


def test_cluster_points_keeps_best_scorer():
    pts = np.array([[0.0], [1e-8], [1.0], [1.0 + 5e-9]])
    keep = cluster_points(pts, np.array([1.0, 2.0, 0.0, -1.0]), 1e-6)
    assert keep.tolist() == [1, 2]


def test_caratheodory_reduce():
    rng = np.random.default_rng(0)
    A = np.vstack([np.ones(9), rng.normal(size=(2, 9))])
    w = rng.dirichlet(np.ones(9))
    b = A @ w
    r = caratheodory_reduce(A, b, w)
    assert np.count_nonzero(r) <= 3 and r.min() >= 0
    np.testing.assert_allclose(A @ r, b, atol=1e-12)


def test_polish_moves_straddling_atoms_onto_the_contact_point():
    # grid measure straddling the interior contact point c = 1.5 of a Jensen witness
    lam, var = 1.0, 0.5
    p = _p(1, Box((0,), (3,)), [("x1", lam), ("x1^2", lam ** 2 + var)], "exp(x1)", "lower")
    mu = DiscreteMeasure.normalized(((0.0,), (1.49,), (1.51,)), (1 / 3, 1 / 3, 1 / 3))
    out = polish_atoms(p, mu, [(np.array([0.0]), np.array([3.0]))], merge_radius=0.05)
    assert out is not None
    np.testing.assert_allclose([a[0] for a in out.atoms], [0.0, 1.5], atol=1e-9)
    np.testing.assert_allclose(out.weights, [1 / 3, 2 / 3], atol=1e-9)


def test_recovered_witness_never_beats_the_bound():
    for direction in ("lower", "upper"):
        p = _p(1, Box((-1,), (2,)), [("x1", 0.3), ("x1^2", 0.8)], "exp(x1)", direction)
        r = solve_dual(p)
        eg = r.check.expectation
        if direction == "upper":
            assert eg <= r.stage_bound + 1e-7
        else:
            assert eg >= r.stage_bound - 1e-7
        assert len(r.measure.atoms) <= p.m + 1


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 3), st.integers(3, 30))
def test_matched_measures_hit_the_moments(seed, m, n):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1, 1, (n, 1))
    fs = ["x1", "x1^2", "exp(x1)"][:m]
    P = lambda t: parse_expr(t, 1)
    F = np.column_stack([pts[:, 0], pts[:, 0] ** 2, np.exp(pts[:, 0])])[:, :m]
    phi = rng.dirichlet(np.ones(n)) @ F
    p = ProblemSpec(1, Box((-1,), (1,)), tuple((P(f), v) for f, v in zip(fs, phi)), P("x1"))
    mu = match_moments(pts, p)
    assert len(mu.atoms) <= m + 1
    for f, v in zip(fs, phi):
        got = sum(w * float(np.asarray(eval(f.replace("^", "**").replace("exp", "np.exp"),
                                            {"np": np, "x1": a[0]}))) for a, w in zip(mu.atoms, mu.weights))
        assert abs(got - v) <= 1e-7
