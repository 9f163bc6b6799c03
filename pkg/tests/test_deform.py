import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gllab import curvature as cv
from gllab import deform as d
from gllab import fncore as fc
from gllab.errors import InfeasibleError, ParameterError
from gllab.torpedo import build_torpedo


@pytest.fixture(scope="module")
def slope_fam():
    return d.sloping_family(0.1, 1.0, 0.5)


@pytest.fixture(scope="module")
def bend_fam():
    return d.bending_family(0.3, 0.5)


@pytest.fixture(scope="module")
def bounds5():
    return d.default_bounds(5, 1.0)


@pytest.fixture(scope="module")
def flat_torpedo(bounds5):
    return d.flatten_homotopy(d.fixture_family("torpedo"), bounds5)


@pytest.fixture(scope="module")
def flat_blend(bounds5):
    return d.flatten_homotopy(d.fixture_family("blend"), bounds5)


@pytest.fixture(scope="module")
def match_torpedo(flat_torpedo, bounds5):
    return d.torpedo_match_homotopy(d.flattened_family(flat_torpedo),
                                    d.endgame_bounds(bounds5))


# bounds


def test_bounds_validation():
    b = d.PSCBounds.make(-1.0, 2.0, 3.0, 4, 1.0)
    assert b.B == 1.0 and b.round_bound == 6.0
    with pytest.raises(ParameterError):
        d.PSCBounds.make(0.0, 3.0, 2.0, 4, 1.0)
    with pytest.raises(ParameterError):
        d.PSCBounds.make(0.0, 1.0, 6.0, 4, 1.0)
    with pytest.raises(ParameterError):
        d.PSCBounds.make(-2.0, 1.0, 3.0, 4, 1.0)
    db = d.default_bounds(5, 2.0)
    assert db.Bp == pytest.approx(0.3) and db.Bpp == pytest.approx(1.8)


# sloping functions


def test_sloping_identity_at_s0(slope_fam):
    t = np.linspace(-0.5, 3.0, 500)
    for r in (0.0, 0.5, 1.0):
        u, c = slope_fam.member(r, 0.0)
        assert np.max(np.abs(u(t) - t)) < 1e-10
        assert c == pytest.approx(slope_fam.b, abs=1e-12)


def test_sloping_plateau_slope(slope_fam):
    u, c = slope_fam.member(1.0, 1.0)
    a, q = slope_fam.a, slope_fam.q
    t = np.linspace(a, 0.8 * c, 100)
    assert np.max(np.abs(u.jets(t, 1)[1] - (1 - q))) < 1e-11
    assert q == pytest.approx(slope_fam.b * slope_fam.p / 10)


def test_sloping_e_point_closed_form(slope_fam):
    # with second derivative -10sq/a on [0.85a, 0.95a] the profile is
    # t - (9/8) s q a + ... past 0.95a, hence e = (b - 9sqa/8) / (1 - sq)
    a, b, q = slope_fam.a, slope_fam.b, slope_fam.q
    for s in (0.25, 0.5, 1.0):
        e = slope_fam.e_point(s)
        assert e == pytest.approx((b - 9 * s * q * a / 8) / (1 - s * q), rel=1e-12)


def test_sloping_c_continuity(slope_fam):
    def cvals(h):
        return np.array([slope_fam.member(1.0, s)[1] for s in np.arange(0.0, 1.0 + h / 2, h)])

    d1 = np.max(np.abs(np.diff(cvals(0.1))))
    d2 = np.max(np.abs(np.diff(cvals(0.05))))
    assert d2 < 0.6 * d1


@pytest.mark.parametrize("params", [(0.1, 1.0, 0.5), (0.05, 2.0, 0.1)])
def test_sloping_clauses_grid(params):
    fam = d.sloping_family(*params)
    for r in np.linspace(0.0, 1.0, 5):
        for s in np.linspace(0.0, 1.0, 5):
            cl = d.sloping_clauses(fam, r, s)
            assert min(cl.values()) >= 0, (r, s, cl)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_sloping_slope_between_zero_and_one(r, s):
    fam = d.sloping_family(0.1, 1.0, 0.5)
    u, c = fam.member(r, s)
    j = u.jets(np.linspace(-1.0, 2 * c, 300), 2)
    assert j[1].min() >= -1e-12 and j[1].max() <= 1 + 1e-12
    assert j[2].max() <= fam.p * r + 1e-9


def test_sloping_rejects_bad_parameters():
    with pytest.raises(ParameterError):
        d.sloping_family(0.9, 1.0, 0.5)
    with pytest.raises(ParameterError):
        d.sloping_family(0.1, 1.0, -1.0)


# bending functions


def test_bending_identity_at_s0(bend_fam):
    t = np.linspace(-0.5, 2.0, 500)
    for r in (0.2, 1.0):
        v, dd = bend_fam.member(r, 0.0)
        assert np.max(np.abs(v(t) - t)) < 1e-10
        assert dd == pytest.approx(bend_fam.beta, abs=1e-12)


def test_bending_attacking_point(bend_fam):
    assert bend_fam.alpha == pytest.approx(0.5 / 4 * math.exp(-1 / 0.3), rel=1e-15)


@pytest.mark.parametrize("r", [0.2, 0.6, 1.0])
def test_bending_final_slope(bend_fam, r):
    v, dd = bend_fam.member(r, 1.0)
    t = np.linspace(dd, 2 * dd, 50)
    assert np.max(np.abs(v.jets(t, 1)[1] - r)) < 1e-9


def test_bending_small_r_plateau(bend_fam):
    al = bend_fam.alpha
    r = 1e-3
    v = bend_fam.profile(r, 1.0)
    near = np.linspace(0.9 * al, 1.1 * al, 50)
    assert np.max(np.abs(v.jets(near, 1)[1])) < 1e-12
    plateau = float(v(al))
    far = np.linspace(2 * al, 0.25, 50)
    # the slope regained past 2 alpha is at most r, so the height barely moves
    assert np.max(np.abs(v(far) - plateau)) <= r * 0.25
    assert np.all(v.jets(far, 1)[1] <= r + 1e-12)


@pytest.mark.parametrize("params", [(0.3, 0.5), (1.0, 0.2)])
def test_bending_clauses_grid(params):
    fam = d.bending_family(*params)
    for r in np.linspace(0.2, 1.0, 5):
        for s in np.linspace(0.0, 1.0, 5):
            cl = d.bending_clauses(fam, r, s)
            assert min(cl.values()) >= 0, (r, s, cl)


def test_bending_rejects_bad_parameters():
    with pytest.raises(ParameterError):
        d.bending_family(-1.0, 0.5)


# easy estimate


def _torpedo_spec(k=4, delta=1.0):
    tp = build_torpedo(delta, 0.05)
    return cv.WarpSpec(k, tp.f)


def test_easy_estimate_round_hypothesis_every_r():
    b = d.PSCBounds.make(0.0, 1.0, 5.0, 4, 1.0)
    w = _torpedo_spec()
    ident = fc.as_smooth(fc.make_piecewise([-1.0, 10.0], [fc.poly([0.0, 1.0])]))
    for r in (0.1, 1.0, 3.0, w.R_bar):
        rep = d.easy_estimate_check(w, ident, b, r, min(r, 2.0))
        assert rep.checks["hyp_round"] >= 0


def test_easy_estimate_identity_reduces_to_sigma():
    b = d.PSCBounds.make(0.0, 1.0, 5.0, 4, 1.0)
    w = _torpedo_spec()
    ident = fc.as_smooth(fc.make_piecewise([-1.0, 10.0], [fc.poly([0.0, 1.0])]))
    rep = d.easy_estimate_check(w, ident, b, 3.0, 3.0)
    assert rep.passed
    t = rep.samples["t"]
    assert np.max(np.abs(rep.values - cv.sigma_fn(w.f, 4, t))) < 1e-9


def test_easy_estimate_spike_breaks_hypothesis():
    b = d.PSCBounds.make(0.0, 1.0, 5.0, 4, 1.0)
    w = _torpedo_spec()
    M = 60.0
    spike = fc.mollify(fc.step_data(-1.0, 10.0, [0.3, 0.31, 0.32], [0.0, M, -M, 0.0]), 0.004)
    h = fc.integrate_twice(spike, 0.0, 0.0, 1.0)
    rep = d.easy_estimate_check(w, h, b, 3.0, 1.0)
    assert rep.checks["hyp_second"] < 0
    assert not rep.passed and "not asserted" in rep.name
    assert rep.min_value < b.Bp


# families and flattening


def test_fixture_families():
    fam = d.fixture_family("blend")
    t = np.linspace(0.0, fam.R, 300)
    assert np.array_equal(fam(0.5)(t), fam(1.0)(t))
    assert not np.allclose(fam(0.0)(t), fam(1.0)(t))
    with pytest.raises(ParameterError):
        d.fixture_family("nope")


def test_glue_warp_continuity():
    f = d.torpedo_warp(1.0, 8.0)
    h = fc.as_smooth(fc.make_piecewise([-1.0, 10.0], [fc.poly([0.0, 0.5])]))
    g = d.glue_warp(f, h, 1.0, 4.0)
    assert g(1.0) == pytest.approx(f(0.5), abs=1e-15)
    assert g(3.0) == pytest.approx(f(2.5), abs=1e-15)


def test_flatten_constants(flat_torpedo, bounds5):
    c = flat_torpedo.const
    K = (bounds5.k - 1) * (bounds5.k - 2)
    assert 0 < c.S <= bounds5.delta and bounds5.Bpp * c.S**2 <= K
    assert c.p == pytest.approx((bounds5.Bpp - bounds5.Bp) * c.F / (2 * (bounds5.k - 1)))
    X = K * (1 - (1 - c.q) ** 2)
    assert bounds5.Bp * c.T**2 + 2 * (bounds5.k - 1) * c.C <= X * (1 + 1e-12)
    assert c.alpha == pytest.approx(c.T / 4 * math.exp(-1 / c.C))
    lhs = c.eta * max(c.p, c.C / (2 * c.alpha))
    assert lhs <= (bounds5.Bpp - bounds5.Bp) * bounds5.delta / (2 * (bounds5.k - 1)) * (1 + 1e-12)


@pytest.mark.parametrize("which", ["flat_torpedo", "flat_blend"])
def test_flatten_verifies(which, request):
    hom = request.getfixturevalue(which)
    rep = d.verify_flatten(hom)
    assert rep.passed, (rep.margin, rep.checks)
    assert rep.min_value >= hom.bounds.Bp


def test_flatten_endpoint_flat(flat_torpedo):
    R, al = flat_torpedo.R, flat_torpedo.const.alpha
    near = np.linspace(R - al / 4, R, 30)
    for x in np.linspace(0.0, 1.0, 7):
        W = flat_torpedo.warp_fn(1.0, x)
        assert np.max(np.abs(W.jets(near, 1)[1])) <= 1e-9


def test_flatten_boundary_preserved(flat_blend):
    t = np.linspace(0.0, flat_blend.R, 400)
    ref = flat_blend.family(1.0).jets(t, 2)
    for lam in np.linspace(0.0, 1.0, 7):
        assert np.max(np.abs(flat_blend.warp_fn(lam, 1.0).jets(t, 2) - ref)) < 1e-12


def test_flatten_damping_and_pull(flat_torpedo):
    eta = flat_torpedo.const.eta
    assert flat_torpedo.damping(0.5) == 1.0
    assert flat_torpedo.damping(5 / 6) == eta
    assert flat_torpedo.damping(0.75) == pytest.approx(6 * (eta - 1) * 0.75 + 5 - 4 * eta)
    assert flat_torpedo.pull(5 / 6) == 0.0
    assert flat_torpedo.pull(1.0) == pytest.approx(flat_torpedo.R)


def test_flatten_rejects_low_curvature_family(bounds5):
    wide = d.torpedo_warp(2.0, 20.0)
    fam = d.WarpFamily("wide", 5.0, 2.0, 20.0, lambda x: wide)
    with pytest.raises(ParameterError):
        d.flatten_homotopy(fam, bounds5)


def test_flatten_infeasible_without_concave_prefix(bounds5):
    sinh = fc.as_smooth(fc.make_piecewise(
        [-1.0, 10.0], [fc.exp_piece(0.5, 1.0) + fc.exp_piece(-0.5, -1.0)]))
    fam = d.WarpFamily("sinh", 2.0, 1.0, 8.0, lambda x: sinh)
    with pytest.raises(InfeasibleError, match="f'' <= 0"):
        d.choose_flatten_constants(fam, bounds5, 2.0, [0.0, 1.0])


# torpedo matching


def test_match_terminal_is_torpedo(match_torpedo):
    R = match_torpedo.R
    t = np.linspace(0.0, R, 400)
    h = build_torpedo(1.0, 0.05).f
    for x in np.linspace(0.0, 1.0, 5):
        assert np.max(np.abs(match_torpedo.warp_fn(1.0, x)(t) - h(t))) <= 1e-9


def test_match_outer_slice_constant(match_torpedo):
    t = np.linspace(0.0, match_torpedo.R, 400)
    ref = match_torpedo.family(1.0)(t)
    for lam in np.linspace(0.0, 1.0, 7):
        assert np.max(np.abs(match_torpedo.warp_fn(lam, 1.0)(t) - ref)) <= 1e-9
    assert all(match_torpedo.theta(x) == 1.0 for x in (0.5, 0.75, 1.0))


def test_match_verifies(match_torpedo):
    rep = d.verify_match(match_torpedo)
    assert rep.passed, (rep.margin, rep.checks)


def test_match_thirds_continuity(match_torpedo):
    t = np.linspace(0.0, match_torpedo.R, 200)
    for x in (0.0, 0.3):
        for lam in (1 / 3, 2 / 3):
            a = match_torpedo.warp_fn(lam - 1e-9, x)(t)
            b = match_torpedo.warp_fn(lam, x)(t)
            assert np.max(np.abs(a - b)) < 1e-6


def test_bisect_theta():
    th = d._bisect_theta(lambda th: 0.3 - th)
    assert 0.3 - 1e-4 <= th <= 0.3
    assert d._bisect_theta(lambda th: 1.0) == 1.0
    with pytest.raises(InfeasibleError):
        d._bisect_theta(lambda th: -1.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.3, 1.0), st.floats(0.3, 1.0), st.floats(0.02, 0.3),
       st.floats(0.02, 0.3), st.floats(0.0, 1.0))
def test_convex_combinations_stay_positive(r0, r1, e0, e1, lam):
    R = 2.5
    f0 = d.torpedo_warp(r0, R, e0)
    f1 = d.torpedo_warp(r1, R, e1)
    g = fc.convex_combine(f0, f1, lam)
    t = np.linspace(0.0, R, 300)
    assert cv.sigma_fn(g, 4, t).min() > 0
    assert g.jets(np.array([0.0]), 3)[3, 0] < 0


# collar interpolation


def test_collar_constant():
    b = d.PSCBounds.make(0.0, 0.5, 1.0, 3, 1.0)
    a, rep = d.collar_interp(0.8, 0.8, 0.5, 2.0, 3.0, b)
    t = rep.samples["t"]
    assert np.max(np.abs(a(t) - 0.8)) < 1e-15
    assert np.allclose(rep.values, 2 / 0.8**2) and rep.passed


def test_collar_finite_length():
    b = d.PSCBounds.make(0.0, 1.0, 1.5, 3, 1.0)
    a, rep = d.collar_interp(0.5, 1.0, 0.5, 2.0, None, b)
    assert rep.passed and math.isfinite(a.domain[1])
    assert rep.min_value >= 1.0


def test_collar_doubling_and_failure():
    b = d.PSCBounds.make(0.0, 1.0, 1.5, 3, 1.0)
    need = d.collar_length(0.5, 0.5, b)
    a, rep = d.collar_interp(0.5, 1.0, 0.5, 2.0, 2.0 + need / 10, b)
    assert a.domain[1] > 2.0 + need / 10 and rep.passed
    with pytest.raises(InfeasibleError):
        d.collar_interp(0.5, 1.0, 0.5, 2.0, 2.0, b)
    with pytest.raises(InfeasibleError):
        d.collar_interp(0.5, 1.0, 0.5, 2.0, 2.0 + need / 1e4, b)


# path approximation


G0 = np.diag([1.0, 2.0])
G1 = np.array([[2.0, 0.5], [0.5, 1.0]])


def test_partition_of_unity():
    for n in (1, 4, 9):
        pou = d.partition_of_unity(n)
        t = np.linspace(0.0, 1.0, 801)
        lam = pou.jets(t)
        assert np.max(np.abs(lam[:, 0].sum(axis=0) - 1)) < 1e-14
        assert lam[:, 0].min() >= 0
        for i in range(n + 1):
            outside = (t <= (i - 1) / n) | (t >= (i + 1) / n)
            assert np.all(lam[i, 0][outside] == 0)


def test_concat_constant_exact():
    A = d.path_concat_approx(cv.constant_path(G0), 5)
    assert A.distance == 0.0
    assert np.array_equal(A(None, 0.4, 0.37), G0)


def test_concat_linear_convergence():
    P = cv.linear_path(G0, G1)
    dist = [d.path_concat_approx(P, n).distance for n in (4, 8, 16, 32, 64)]
    for a, b in zip(dist, dist[1:]):
        assert b <= 0.6 * a


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 1.0), st.integers(1, 12))
def test_concat_endpoints_exact(s, n):
    P = cv.linear_path(G0, G1)
    A = d.path_concat_approx(P, n, n_s=2, n_t=3)
    assert np.array_equal(A(None, s, 0.0), P.matrices(0.0)[0])
    assert np.array_equal(A(None, s, 1.0), P.matrices(s)[0])


# collar transition


def test_transition_profile_bounds():
    f = d.transition_profile()
    t = np.linspace(-1.0, 2.0, 3001)
    j = f.jets(t, 2)
    assert np.max(np.abs(j[1])) <= 3 and np.max(np.abs(j[2])) <= 9
    assert np.all(j[0][t <= 1 / 32] == 0)
    assert np.max(np.abs(j[0][t >= 31 / 32] - 1)) < 1e-14


def test_collar_transition_constant():
    ct, rep = d.collar_transition(cv.constant_path(G0, 2.0), 0.1, n=4, n_s=3, n_t=21)
    assert rep.passed and np.allclose(rep.values, 2.0)


def test_collar_transition_conformal():
    phi = fc.as_smooth(fc.make_piecewise([-1.0, 2.0], [fc.sine(0.3, 2 * math.pi)]))
    ct, rep = d.collar_transition(cv.conformal_path(phi, 2), 0.1, n=8, n_s=6, n_t=61)
    assert rep.passed, rep.checks
    assert rep.min_value >= -0.1
    assert rep.checks["cylinder_start"] >= 0 and rep.checks["cylinder_end"] >= 0
    s = 1.0
    P = ct(s)
    a = ct.a(s)
    assert np.array_equal(P.matrices(-0.5)[0], cv.conformal_path(phi, 2).matrices(0.0)[0])
    assert np.allclose(P.matrices(a + 1)[0], cv.conformal_path(phi, 2).matrices(s)[0],
                       atol=1e-14)
