"""Acceptance criteria at their stated tolerances and runtime limits.

Each test records one pass/fail line, printed in the terminal summary.
"""

import contextlib
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from gllab import cli
from gllab import curvature as cv
from gllab import deform as d
from gllab import fncore as fc
from gllab import glcurve as gc
from gllab.errors import InfeasibleError
from gllab.torpedo import build_torpedo, validate_torpedo


@contextlib.contextmanager
def criterion(n, title, limit):
    """Time the block; record one summary line; fail on error or overtime."""
    start = time.perf_counter()
    err = None
    try:
        yield
    except BaseException as exc:
        err = exc
    elapsed = time.perf_counter() - start
    ok = err is None and elapsed < limit
    why = "" if err is None else f" [{type(err).__name__}: {err}]"
    line = (f"criterion {n:2d} {title}: {'PASS' if ok else 'FAIL'} "
            f"({elapsed:.2f}s, limit {limit:g}s){why}")
    ACCEPTANCE_LINES.append((n, line))
    print(line)
    if err is not None:
        raise err
    assert elapsed < limit, line


def test_01_round_sphere():
    with criterion(1, "round-sphere value", 1.0):
        f = fc.restrict(fc.sin_fn(-1.0, 4.0), 0.0, math.pi)
        t = np.linspace(0.1, math.pi - 0.1, 200)
        for k in range(3, 8):
            assert np.max(np.abs(cv.sigma_fn(f, k, t) - k * (k - 1))) <= 1e-9


def test_02_torpedo_suite():
    with criterion(2, "torpedo suite", 5.0):
        for delta in (0.5, 1.0, 2.0):
            for eps in (0.02, 0.05, 0.1):
                tp = build_torpedo(delta, eps)
                for k in range(3, 8):
                    rep = validate_torpedo(tp.f, delta, k)
                    assert rep.passed, (delta, eps, k, rep.margin, rep.checks)
                    assert np.isfinite(rep.margin)


def test_03_revolution_identity():
    with criterion(3, "revolution identity", 10.0):
        rep = cli.revolution_identity(np.random.default_rng(3), 20, (3, 4, 5), 200, 1e-8)
        assert rep.samples["case"].size == 60 and rep.passed, rep.min_value


def test_04_oracle_agreement():
    with criterion(4, "oracle agreement", 30.0):
        rep = cli.oracle_agreement(np.random.default_rng(4), 10, 3, 1e-5)
        assert rep.passed, (rep.min_value, rep.checks)


def test_05_scaling_identity():
    with criterion(5, "scaling identity", 1.0):
        rep = cli.scaling_identity(np.random.default_rng(5), 10, (0.3, 1.0, 2.5), (3, 4, 5),
                                   1e-10)
        assert rep.passed, rep.min_value


def test_06_bend_ode():
    with criterion(6, "bend ODE conserved quantity", 5.0):
        rep = cli.conserved_quantity(np.random.default_rng(6), 20, 1e-8, 1e-6)
        assert rep.samples["case"].size == 20 and rep.passed, (rep.min_value, rep.checks)


@pytest.mark.parametrize("k", [3, 4, 5])
def test_07_gl_family(k):
    with criterion(7, f"GL family k={k}", 60.0):
        p = gc.select_parameters(k, 0.1, 0.1, 2.0, 1.0, C=0.0, base_scal=0.0)
        fam, rep = gc.build_verified_family(p, np.linspace(0.0, 1.0, 51), n_s=400)
        assert rep.passed and rep.min_value >= -0.1, (rep.margin, rep.checks)
        assert len(rep.values) >= 51 * 400
        assert fam.r_inf <= 0.1 and fam.length_achieved >= 2.0
        y = fam.curves[0].sample(400)["y"]
        assert np.max(np.abs(y)) <= 1e-10


def test_08_error_remark():
    with criterion(8, "forced exponent feasibility", 1.0):
        with pytest.raises(InfeasibleError) as exc:
            gc.select_parameters(3, 0.1, 0.1, 2.0, 1.0, force_a=2.0)
        assert exc.value.constraint == "-2/a+k-2 > 0" and "-2/a+k-2" in str(exc.value)
        assert gc.select_parameters(3, 0.1, 0.1, 2.0, 1.0, force_a=2.5).a == 2.5
        assert gc.select_parameters(5, 0.1, 0.1, 2.0, 1.0, force_a=2.0).a == 2.0


def test_09_flatten_pipeline():
    with criterion(9, "flatten pipeline, both fixtures", 120.0):
        b = d.default_bounds(5, 1.0)
        for name in ("torpedo", "blend"):
            hom = d.flatten_homotopy(d.fixture_family(name), b)
            rep = d.verify_flatten(hom)
            assert rep.min_value >= b.Bp and rep.passed, (name, rep.margin, rep.checks)
            for key in ("endpoint_flat", "endpoint_concave", "boundary_fixed"):
                assert rep.checks[key] >= 0, (name, key)


def test_10_torpedo_match():
    with criterion(10, "torpedo-match endgame", 60.0):
        b = d.default_bounds(5, 1.0)
        hom = d.flatten_homotopy(d.fixture_family("blend"), b)
        eb = d.endgame_bounds(b)
        m = d.torpedo_match_homotopy(d.flattened_family(hom), eb)
        rep = d.verify_match(m)
        assert rep.passed and rep.min_value >= eb.Bpp, (rep.margin, rep.checks)
        t = np.linspace(0.0, m.R, 400)
        h = build_torpedo(1.0, 0.05).f
        for x in np.linspace(0.0, 1.0, 9):
            assert np.max(np.abs(m.warp_fn(1.0, x)(t) - h(t))) <= 1e-9
        assert all(m.theta(x) == 1.0 for x in np.linspace(0.5, 1.0, 11))


def test_11_mollifier_affine():
    with criterion(11, "mollifier affine exactness", 5.0):
        rep = cli.mollifier_affine(np.random.default_rng(11), 100, 1e-10)
        assert rep.samples["case"].size == 100 and rep.passed, rep.min_value


def test_12_path_approximation():
    with criterion(12, "path approximation", 10.0):
        G0 = np.diag([1.0, 2.0])
        G1 = np.array([[2.0, 0.5], [0.5, 1.0]])
        P = cv.linear_path(G0, G1)
        dist = []
        for n in (4, 8, 16, 32, 64):
            A = d.path_concat_approx(P, n)
            dist.append(A.distance)
            for s in (0.0, 0.3, 1.0):
                assert np.array_equal(A(None, s, 0.0), P.matrices(0.0)[0])
                assert np.array_equal(A(None, s, 1.0), P.matrices(s)[0])
        for a, b in zip(dist, dist[1:]):
            assert b <= 0.6 * a, dist


def test_13_clause_suites():
    with criterion(13, "sloping and bending clauses", 10.0):
        grid = np.linspace(0.0, 1.0, 5)
        for params in ((0.1, 1.0, 0.5), (0.05, 2.0, 0.1)):
            fam = d.sloping_family(*params)
            for r in grid:
                for s in grid:
                    assert min(d.sloping_clauses(fam, r, s, n=200).values()) >= 0
        for params in ((0.3, 0.5), (1.0, 0.2)):
            fam = d.bending_family(*params)
            for r in np.linspace(0.2, 1.0, 5):
                for s in grid:
                    assert min(d.bending_clauses(fam, r, s, n=200).values()) >= 0
