import math

import numpy as np
import pytest

from gllab import curvature as cv
from gllab import fncore as fc
from gllab.errors import ParameterError
from gllab.torpedo import build_cap_profile, build_torpedo, validate_torpedo


def test_cap_profile():
    eps = 0.05
    u = build_cap_profile(eps)
    j = fc.eval_jet(u, 0.0, 1)
    assert abs(j.value) < 1e-15 and abs(j.d1 - 1.0) < 1e-14
    assert u(math.pi) == pytest.approx(math.pi / 2, abs=1e-15)
    t = np.linspace(0, math.pi / 2 - eps, 300)
    assert np.max(np.abs(u(t) - t)) < 1e-14
    t = np.linspace(math.pi / 2 + eps, 6, 300)
    assert np.max(np.abs(u(t) - math.pi / 2)) < 1e-12
    g = np.linspace(0, 6, 1000)
    assert u.jets(g, 2)[2].max() <= 1e-10
    for bad in (0.0, math.pi / 4, -1):
        with pytest.raises(ParameterError):
            build_cap_profile(bad)


def test_torpedo_examples():
    tp = build_torpedo(1.0, 0.05)
    t = np.linspace(0, math.pi / 2 - 0.05, 200)
    assert np.max(np.abs(tp.f(t) - np.sin(t))) < 1e-14
    j = fc.eval_jet(tp.f, tp.R, 1)
    assert j.value == pytest.approx(1.0, abs=1e-14) and abs(j.d1) < 1e-14
    tp2 = build_torpedo(2.0, 0.05)
    rep = validate_torpedo(tp2.f, 2.0, 3)
    assert rep.passed and rep.min_value >= 0.5


@pytest.mark.parametrize("delta", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("eps", [0.02, 0.05, 0.1])
def test_torpedo_suite(delta, eps):
    tp = build_torpedo(delta, eps)
    for k in range(3, 8):
        rep = validate_torpedo(tp.f, delta, k)
        assert rep.passed, (k, rep.margin, rep.checks)
    # spherical region has the round value
    t = np.linspace(1e-4, delta * (math.pi / 2 - eps), 100)
    for k in (3, 6):
        assert np.max(np.abs(cv.sigma_fn(tp.f, k, t) - k * (k - 1) / delta**2)) < 1e-8
    assert tp.R == pytest.approx(delta * build_torpedo(1.0, eps).R, abs=1e-12)


def test_validate_failures():
    rep = validate_torpedo(fc.identity(0.0, 1.0), 1.0, 3)
    assert not rep.passed and rep.checks["constant_tail"] < 0
    rep = validate_torpedo(fc.restrict(fc.sin_fn(-1, 4), 0.0, math.pi), 1.0, 3)
    assert not rep.passed and rep.checks["slope_in_unit_interval"] < 0
