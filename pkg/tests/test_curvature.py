import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gllab import curvature as cv
from gllab import fncore as fc
from gllab.errors import AxisError, ParameterError, SingularMetricError, WarpingError


def random_concave_warp(rng, R=2.0):
    """sum_i w_i c_i sin(t / c_i) with weights summing to one (odd, f'(0)=1)."""
    n = rng.integers(1, 4)
    w = rng.dirichlet(np.ones(n))
    c = rng.uniform(R / 1.4, 3 * R, n)
    piece = tuple(fc.Trig(wi * ci, 1.0 / ci) for wi, ci in zip(w, c))
    return fc.as_smooth(fc.make_piecewise([0.0, R], [piece]))


def sine_warp(hi=np.pi):
    return cv.WarpSpec(3, fc.restrict(fc.sin_fn(-1, 4), 0.0, hi))


def test_sigma_round_sphere():
    t = np.linspace(0.1, np.pi - 0.1, 200)
    for k in range(3, 8):
        w = cv.WarpSpec(k, fc.restrict(fc.sin_fn(-1, 4), 0.0, np.pi))
        assert np.max(np.abs(cv.sigma_warp(w, t) - k * (k - 1))) <= 1e-9
    assert abs(cv.sigma_warp(sine_warp(), np.pi / 4) - 6.0) < 1e-12


def test_sigma_flat_and_cylinder():
    w = cv.WarpSpec(5, fc.identity(0.0, 3.0))
    assert np.max(np.abs(cv.sigma_warp(w, np.linspace(0, 3, 50)))) < 1e-12
    delta = 1.0
    cyl = fc.constant(delta, 0.0, 1.0)
    assert cv.sigma_fn(cyl, 4, 0.5, t_switch=0.0)[0] == pytest.approx(6.0 / delta**2, abs=1e-14)


def test_sigma_small_branch():
    w = sine_warp()
    # limit value -k(k-1) f'''(0) = k(k-1) for sin
    assert cv.sigma_warp(w, 0.0) == pytest.approx(6.0, abs=1e-12)
    ts = w.R_bar * cv.T_SWITCH_REL
    left = cv.sigma_fn(w.f, 3, ts, t_switch=ts)[0]
    right = cv.sigma_fn(w.f, 3, ts, t_switch=0.0)[0]
    assert abs(left - right) < 1e-6
    tiny = np.array([1e-9, 1e-7, 1e-5])
    assert np.max(np.abs(cv.sigma_warp(w, tiny) - 6.0)) < 1e-10


def test_sigma_branch_consistency_random():
    rng = np.random.default_rng(3)
    for _ in range(10):
        f = random_concave_warp(rng)
        ts = cv.T_SWITCH_REL * f.domain[1]
        for k in (3, 5):
            a = cv.sigma_fn(f, k, ts, t_switch=ts)[0]
            b = cv.sigma_fn(f, k, ts, t_switch=0.0)[0]
            assert abs(a - b) <= 1e-6 * (1 + abs(a))


def test_sigma_rejects_nonpositive():
    f = fc.restrict(fc.sin_fn(-1, 7), 0.0, 4.0)
    with pytest.raises(WarpingError):
        cv.WarpSpec(3, f)
    with pytest.raises(WarpingError):
        cv.sigma_fn(f, 3, 3.5)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([0.3, 1.0, 2.5]), st.integers(3, 6))
def test_scaling_identity(seed, theta, k):
    f = random_concave_warp(np.random.default_rng(seed))
    t = np.linspace(0.0, f.domain[1], 60)
    lhs = cv.sigma_fn(fc.scale_warp(f, theta), k, theta * t)
    rhs = cv.sigma_fn(f, k, t) / theta**2
    assert np.max(np.abs(lhs - rhs)) <= 1e-10 * max(1.0, np.max(np.abs(rhs)))


def test_trace_constant_and_conformal():
    P = cv.constant_path(np.diag([1.0, 2.0]), spatial_scal=3.5)
    assert cv.scal_trace_path(P, 0.4) == 3.5
    phi = fc.as_smooth(fc.make_piecewise([-1, 2], [fc.sine(0.3, 1.1, 0.2) + fc.poly([0, 0.5])]))
    for d in (1, 2, 3):
        P = cv.conformal_path(phi, d)
        for t in np.linspace(0, 1, 7):
            p = phi.jets(t, 2)[:, 0]
            assert cv.scal_trace_path(P, t) == pytest.approx(-2 * d * p[2] - d * (d + 1) * p[1] ** 2, abs=1e-12)


def test_trace_orthogonal_invariance():
    rng = np.random.default_rng(11)
    a = [fc.as_smooth(fc.make_piecewise([-1, 2], [fc.poly([1.0 + rng.uniform(0, 1), rng.uniform(-.3, .3), rng.uniform(-.3, .3)])])) for _ in range(3)]
    P = cv.diagonal_path(a)
    Q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    sym = lambda m: 0.5 * (m + m.T)
    PQ = cv.MetricPath(3, lambda t: tuple(sym(Q.T @ m @ Q) for m in P.matrices(t)))
    for t in (0.0, 0.3, 0.9):
        assert abs(cv.scal_trace_path(P, t) - cv.scal_trace_path(PQ, t)) < 1e-10


def test_trace_singular():
    P = cv.constant_path(np.zeros((2, 2)))
    with pytest.raises(SingularMetricError):
        cv.scal_trace_path(P, 0.0)


def test_oracle_euclidean_and_sphere():
    assert abs(cv.fd_oracle_scal(lambda x: np.eye(3), [0.1, 0.2, 0.3], 3)) < 1e-12
    rho = 1.3
    f = fc.scale_warp(fc.sin_fn(-1, 4), rho)
    vals = [cv.fd_oracle_scal(cv.warped_sampler(f, 2), [1.0, 0.4], 2, rel_step=h) for h in (1e-3, 5e-4)]
    for v in vals:
        assert v == pytest.approx(2 / rho**2, rel=1e-6)


def test_oracle_matches_sigma_on_torpedo_cap():
    from gllab.torpedo import build_torpedo

    tp = build_torpedo(1.0, 0.05)
    for t in (0.4, 1.0, np.pi / 2 - 0.01, np.pi / 2 + 0.03):
        o = cv.fd_oracle_scal(cv.warped_sampler(tp.f, 3), [t, 1.1, 0.0], 3)
        assert o == pytest.approx(cv.sigma_fn(tp.f, 3, t)[0], rel=1e-5)


def test_oracle_agrees_with_trace_on_diagonal_paths():
    rng = np.random.default_rng(5)
    for _ in range(4):
        d = int(rng.integers(1, 4))
        a = [fc.as_smooth(fc.make_piecewise([-1, 2], [fc.poly([1.0, rng.uniform(-.4, .4)]) + fc.sine(rng.uniform(0.05, .2), rng.uniform(1, 3))])) for _ in range(d)]
        P = cv.diagonal_path(a)
        t = rng.uniform(0.1, 0.9)
        x = np.zeros(d + 1)
        x[0] = t
        exact = cv.scal_trace_path(P, t)
        assert abs(cv.fd_oracle_scal(cv.path_sampler(P), x, d + 1) - exact) <= 1e-5 * max(1, abs(exact))


def test_oracle_errors():
    from gllab.errors import OracleError

    with pytest.raises(ParameterError):
        cv.fd_oracle_scal(lambda x: np.eye(5), np.zeros(5), 5)
    with pytest.raises(OracleError):
        cv.fd_oracle_scal(lambda x: np.zeros((2, 2)), np.zeros(2), 2)


class Jet:
    def __init__(self, y, r, theta, kappa):
        self.y, self.r, self.theta, self.kappa = y, r, theta, kappa


def test_principal_curvatures_model():
    eps = 0.3
    lam = cv.principal_curvatures_model(Jet(0, eps, np.pi / 2, 0.0), 4, 6).lambdas
    assert lam == pytest.approx((0.0, -1 / eps, -1 / eps, -1 / eps, 0.0, 0.0))
    lam = cv.principal_curvatures_model(Jet(0, 1.0, 0.0, 0.7), 3, 3).lambdas
    assert lam == (0.7, 0.0, 0.0) or lam == (0.7, -0.0, -0.0)
    rho, th = 2.0, 0.8
    lam = cv.principal_curvatures_model(Jet(0, rho * np.sin(th), th, -1 / rho), 3, 3).lambdas
    assert np.allclose(lam, -1 / rho)
    with pytest.raises(AxisError):
        cv.principal_curvatures_model(Jet(0, 0.0, 0.0, 0.0), 3, 3)


def test_revolution_examples():
    eps = 0.2
    for k in (3, 4, 5):
        v = cv.revolution_scal_from_arrays(k, eps, np.pi / 2, 0.0)
        assert v == pytest.approx((k - 1) * (k - 2) / eps**2)
        rho, th = 1.5, np.linspace(0.1, 1.5, 9)
        v = cv.revolution_scal_from_arrays(k, rho * np.sin(th), th, -1 / rho)
        assert np.allclose(v, k * (k - 1) / rho**2)
        assert cv.revolution_scal_from_arrays(k, 1.0, 0.0, 0.0, A=-0.7) == -0.7


def test_revolution_identity_coefficients():
    # 2 sum lambda_i lambda_j expands as -2(k-1) kappa sin/r + (k-1)(k-2) sin^2/r^2
    rng = np.random.default_rng(2)
    for k in (3, 4, 5):
        r = rng.uniform(0.1, 2, 100)
        th = rng.uniform(0, np.pi / 2, 100)
        ka = rng.normal(size=100)
        v = cv.revolution_scal_from_arrays(k, r, th, ka)
        expect = -2 * (k - 1) * ka * np.sin(th) / r + (k - 1) * (k - 2) * np.sin(th) ** 2 / r**2
        assert np.max(np.abs(v - expect)) < 1e-10
        # equal to sigma of the radius profile: r' = -cos, r'' = kappa sin
        sig = cv.sigma_from_jets(k, r, -np.cos(th), ka * np.sin(th))
        assert np.max(np.abs(v - sig)) <= 1e-8
        lb = cv.lower_bound_from_arrays(k, r, th, ka, 0.0, 0.0)
        assert np.max(np.abs(v - lb)) < 1e-10


def test_lower_bound_examples():
    k, r = 4, 0.5
    assert cv.lower_bound_estimate(Jet(0, r, np.pi / 2, 0.0), k, 0.0, 1.0) == pytest.approx(1 + 6 / r**2)
    rng = np.random.default_rng(8)
    for _ in range(100):
        cj = Jet(0, rng.uniform(0.01, 1), rng.uniform(0, np.pi / 2), -abs(rng.normal()))
        assert cv.lower_bound_estimate(cj, k, 0.0, 2.0) >= 2.0
    with pytest.raises(AxisError):
        cv.lower_bound_estimate(Jet(0, 0.0, 0.1, 0.0), 3, 0.0, 0.0)


def test_gajer_bound():
    assert cv.gajer_bound([cv.constant_path(np.eye(2))], 0.1, cap=7.0) == 7.0
    with pytest.raises(ParameterError):
        cv.gajer_bound([cv.constant_path(np.eye(2))], 0.0)
    with pytest.raises(ParameterError):
        cv.gajer_bound([], 0.1)
    phi = fc.identity(-1.0, 2.0)
    P = cv.conformal_path(phi, 2)
    eta = 0.1
    lam = cv.gajer_bound([P], eta)
    assert 0 < lam < 1
    rng = np.random.default_rng(0)
    for _ in range(20):
        # f(t) = c + a sin(w t) with |f'|, |f''| <= Lambda and values in [0, 1]
        wv = rng.uniform(0.2, 1.0)
        amp = lam / max(wv, wv * wv) * rng.uniform(0.5, 1.0)
        amp = min(amp, 0.5)
        f = fc.as_smooth(fc.make_piecewise([-5, 5], [fc.const(0.5) + fc.sine(amp, wv, rng.uniform(0, 6))]))
        Pf = cv.reparametrized_path(P, f)
        for t in np.linspace(-4, 4, 30):
            assert cv.scal_trace_path(Pf, t) >= P.spatial_scal - eta - 1e-12


def test_report_json_roundtrip():
    rep = cv.make_report("demo", {"t": [0.0, 1.0]}, [1.0, 2.5], 0.5, {"tail": 0.1})
    d = json.loads(json.dumps(rep.to_json()))
    back = cv.CurvatureReport.from_json(d)
    assert back.min_value == 1.0 and back.margin == pytest.approx(0.1) and back.passed
    assert np.array_equal(back.values, rep.values)
    bad = cv.make_report("bad", {"t": [0.0]}, [0.0], 1.0)
    assert not bad.passed and bad.margin == -1.0
