import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hullbounds.closed_forms import (ThreePointParam, jarzynski_bound, jensen_gap_bounds,
                                     markov_bound, mgf_bounds, mgf_interval_bounds,
                                     power_mean_bounds, three_point_atoms, three_point_extremize,
                                     variance_range)
from hullbounds.expr import parse_expr

E = math.e


def _moments(mu):
    x = np.array([a[0] for a in mu.atoms])
    w = np.array(mu.weights)
    mean = w @ x
    return mean, w @ (x - mean) ** 2, x


def test_variance_range():
    assert variance_range(0, 1, 0.5) == (0.0, 0.25)
    assert variance_range(-1, 1, 0) == (0.0, 1)
    assert variance_range(0, 1, 1e-12)[1] < 1e-11
    with pytest.raises(ValueError):
        variance_range(0, 1, 1.0)


@pytest.mark.parametrize("a,b,lam,var", [(0, 1, 0.3, 0.1), (-2, 3, 0.5, 4.0), (1, 5, 2, 0.5)])
def test_jensen_square_is_pinned(a, b, lam, var):
    jb = jensen_gap_bounds(lambda x: x * x, a, b, lam, var)
    assert jb.lower == pytest.approx(lam ** 2 + var, abs=1e-12)
    assert jb.upper == pytest.approx(lam ** 2 + var, abs=1e-12)


def test_jensen_exponential_matches_finite_interval_mgf():
    lam, var, s, a = 1.0, 0.5, 0.7, 4.0
    jb = jensen_gap_bounds(parse_expr("exp(0.7*x1)", 1), 0.0, a, lam, var)
    lo, hi = mgf_interval_bounds(lam, var, s, a)
    assert jb.lower == pytest.approx(lo, rel=1e-14)
    assert jb.upper == pytest.approx(hi, rel=1e-14)
    c = lam + var / (lam - a)
    printed = (var * math.exp(a * s) + (lam - a) ** 2 * math.exp(s * c)) / (var + (lam - a) ** 2)
    assert hi == pytest.approx(printed, rel=1e-14)


def test_jensen_fourth_power_at_maximal_variance():
    jb = jensen_gap_bounds(lambda x: x ** 4, -1, 1, 0, 1)
    assert jb.lower == pytest.approx(1.0, abs=1e-14)
    assert jb.upper == pytest.approx(1.0, abs=1e-14)
    assert [a[0] for a in jb.mu_lower.atoms] == [-1.0, 1.0]


def test_jensen_rejects_out_of_range_variance():
    with pytest.raises(ValueError):
        jensen_gap_bounds(lambda x: x ** 4, -1, 1, 0, 1.5)
    with pytest.raises(ValueError):
        jensen_gap_bounds(lambda x: x ** 4, -1, 1, 0, 0.0)


def test_concave_derivative_swaps_branches():
    convex = jensen_gap_bounds(lambda x: math.exp(x), 0, 2, 0.8, 0.5)
    concave = jensen_gap_bounds(lambda x: -math.exp(x), 0, 2, 0.8, 0.5, derivative="concave")
    assert concave.lower == pytest.approx(-convex.upper, rel=1e-15)
    assert concave.upper == pytest.approx(-convex.lower, rel=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.floats(-5, 5), st.floats(0.1, 5), st.floats(0.01, 0.99), st.floats(0.01, 1.0))
def test_jensen_witnesses_are_valid(a, width, t, frac):
    b = a + width
    lam = a + t * width
    var = frac * (b - lam) * (lam - a)
    jb = jensen_gap_bounds(math.exp, a, b, lam, var)
    for mu in (jb.mu_lower, jb.mu_upper):
        mean, v, x = _moments(mu)
        assert abs(mean - lam) <= 1e-10 * (1 + abs(lam))
        assert abs(v - var) <= 1e-10 * (1 + var)
        assert np.all(x >= a - 1e-12) and np.all(x <= b + 1e-12)
    assert jb.lower <= jb.upper + 1e-12


def test_mgf_examples():
    lo, hi = mgf_bounds(1, 1, 1)
    assert lo == pytest.approx((1 + E ** 2) / 2, abs=1e-12)
    assert lo == pytest.approx(4.19453, abs=1e-5)
    assert hi == math.inf
    lo, hi = mgf_bounds(1, 1, -1)
    assert lo == pytest.approx(1 / E, abs=1e-15)
    assert hi == pytest.approx((1 + E ** -2) / 2, abs=1e-15)
    for s in (1.3, -0.4):
        lo, hi = mgf_bounds(0.8, 1e-10, s)
        near = lo if s > 0 else hi
        assert near == pytest.approx(math.exp(0.8 * s), rel=1e-8)
    with pytest.raises(ValueError):
        mgf_bounds(1, 1, 0)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.1, 3), st.floats(0.1, 3), st.floats(0.01, 3))
def test_mgf_lower_dominates_jensen(lam, var, s):
    assert mgf_bounds(lam, var, s)[0] >= math.exp(lam * s) - 1e-12


@pytest.mark.parametrize("s", [0.5, -0.5, -2.0])
def test_finite_interval_converges_monotonically(s):
    lam, var = 1.0, 1.0
    lo_inf, hi_inf = mgf_bounds(lam, var, s)
    seq = [mgf_interval_bounds(lam, var, s, a) for a in (10.0, 1e2, 1e3, 1e4)]
    near = [hi if s < 0 else lo for lo, hi in seq]
    far = [lo if s < 0 else hi for lo, hi in seq]
    assert all(v == pytest.approx(near[0], rel=1e-14) for v in near)
    assert near[0] == pytest.approx(hi_inf if s < 0 else lo_inf, rel=1e-14)
    if s < 0:
        # the lower bound decreases toward Jensen's value
        assert np.all(np.diff(far) <= 0)
        assert abs(far[-1] - lo_inf) < abs(far[-2] - lo_inf)
        assert far[-1] == pytest.approx(lo_inf, abs=1e-3)
    else:
        assert np.all(np.diff(far) >= 0)


def test_power_mean_examples():
    lo, hi = power_mean_bounds(1, 1, 4)
    assert lo == pytest.approx(2 ** 0.75, abs=1e-14) and hi is None
    assert power_mean_bounds(1, 1, -1) == (0.0, 1)
    assert power_mean_bounds(1, 1, 2) == (math.sqrt(2), math.sqrt(2))
    assert power_mean_bounds(1, 1, 1) == (1, 1)
    with pytest.raises(ValueError):
        power_mean_bounds(1, 1, 0)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.1, 3), st.floats(0.1, 3), st.floats(-4, 4).filter(lambda s: abs(s) > 1e-3))
def test_power_mean_regimes_are_ordered(lam, var, s):
    lo, hi = power_mean_bounds(lam, var, s)
    if hi is not None:
        assert lo <= hi * (1 + 1e-12)


def test_power_mean_continuity_at_regime_edges():
    lam, var = 1.0, 1.0
    assert power_mean_bounds(lam, var, 2 - 1e-9)[1] == pytest.approx(math.sqrt(2), abs=1e-8)
    assert power_mean_bounds(lam, var, 2 + 1e-9)[0] == pytest.approx(math.sqrt(2), abs=1e-8)
    assert power_mean_bounds(lam, var, 1 - 1e-9)[0] == pytest.approx(1.0, abs=1e-8)


def test_three_point_atoms_examples():
    tp = ThreePointParam((1 / 3, 1 / 3, 1 / 3), 0.0, 0.0, 1.0)
    xa, xb, xc = three_point_atoms(tp)
    assert xc == 0.0
    assert xa + xb == pytest.approx(0.0, abs=1e-15)
    assert xa == pytest.approx(math.sqrt(1.5), abs=1e-15)
    w = np.full(3, 1 / 3)
    x = np.array([xa, xb, xc])
    assert w @ x == pytest.approx(0, abs=1e-15) and w @ x ** 2 == pytest.approx(1, abs=1e-15)
    xa, xb, xc = three_point_atoms(ThreePointParam((0.3, 0.3, 0.4), 0.0, 2.5, 0.7))
    assert xc == 2.5 and xa + xb == pytest.approx(5.0, abs=1e-14)


def test_three_point_param_validation():
    with pytest.raises(ValueError):
        ThreePointParam((0.5, 0.5, 0.0), 0.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        ThreePointParam((0.5, 0.4, 0.2), 0.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        ThreePointParam((0.3, 0.3, 0.4), 0.0, 0.0, 0.0)


def test_three_point_moment_matching_on_1000_parameters():
    rng = np.random.default_rng(20261019)
    for _ in range(1000):
        p = rng.dirichlet(np.ones(3))
        p = np.clip(p, 1e-6, None)
        p /= p.sum()
        lam, sigma, theta = rng.normal(0, 3), rng.uniform(0.05, 5), rng.uniform(0, 2 * math.pi)
        x = np.array(three_point_atoms(ThreePointParam(tuple(p), theta, lam, sigma)))
        assert abs(p @ x - lam) <= 1e-10 * (1 + abs(lam))
        assert abs(p @ (x - lam) ** 2 - sigma ** 2) <= 1e-10 * (1 + sigma ** 2)


def test_three_point_extremize_examples():
    sq = parse_expr("x1^2", 1)
    for d in ("lower", "upper"):
        assert three_point_extremize(sq, 0.4, 1.5, d, n_starts=4) == pytest.approx(1.66, abs=1e-12)
    assert three_point_extremize(parse_expr("x1^4", 1), 0, 1, "lower", n_starts=16) == \
        pytest.approx(1.0, abs=1e-9)


def test_three_point_extremize_is_an_inner_estimate():
    # unrestricted lower bound of E exp(X) at mean 1, variance 1 is Jensen's e, approached
    # by a vanishing far-left atom; any three-point value stays above it
    v = three_point_extremize(parse_expr("exp(x1)", 1), 1, 1, "lower", n_starts=16)
    assert v >= E - 1e-12
    assert v == pytest.approx(E, abs=1e-3)


def test_three_point_extremize_is_deterministic():
    g = parse_expr("exp(x1) + x1^3", 1)
    assert three_point_extremize(g, 0, 1, "lower", n_starts=8, seed=5) == \
        three_point_extremize(g, 0, 1, "lower", n_starts=8, seed=5)


def test_markov_examples():
    assert markov_bound(1, 2) == 0.5
    assert markov_bound(2, 1) == 0.0
    assert markov_bound(1e-12, 1) == pytest.approx(1.0, abs=1e-11)


def test_jarzynski_examples():
    assert jarzynski_bound(-3, 0.5) == pytest.approx(0.59428, abs=1e-5)
    assert jarzynski_bound(-3, -0.2) == 1.0
    assert jarzynski_bound(-3, 0.0) == 1.0
    with pytest.raises(ValueError):
        jarzynski_bound(1, 2)
