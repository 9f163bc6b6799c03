"""Deformations of warping functions: sloping and bending reparametrizations,
the flattening homotopy, the torpedo-matching endgame, and the path
approximation with its collar transition metric."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy import optimize

from . import fncore as fc
from .curvature import (CurvatureReport, MetricPath, WarpSpec, gajer_bound, make_report,
                        reparametrized_path, scal_trace_path, sigma_fn,
                        sigma_from_jets)
from .errors import ConstructionError, InfeasibleError, ParameterError

SLOPE_TOL = 1e-12   # equalities of first derivatives built from exact pieces
LOG_TOL = 1e-9      # first-derivative equalities that pass through log(t)
CURV_RTOL = 1e-9    # second-derivative sign conditions, relative to the bump height


# ---------------------------------------------------------------------------
# curvature bounds


@dataclass(frozen=True)
class PSCBounds:
    """Offset A = inf scal of the fibre factor, B = max(0, -A) and B <= B' < B''."""

    A: float
    B: float
    Bp: float
    Bpp: float
    k: int
    delta: float

    def __post_init__(self):
        if self.k < 3:
            raise ParameterError("k must be at least 3")
        if not self.delta > 0.0:
            raise ParameterError("delta must be positive")
        if abs(self.B - max(0.0, -self.A)) > 1e-12 * (1.0 + abs(self.A)):
            raise ParameterError(f"B must equal max(0, -A) = {max(0.0, -self.A)}")
        if not self.B <= self.Bp < self.Bpp < self.round_bound:
            raise ParameterError(
                f"need B <= B' < B'' < (k-1)(k-2)/delta^2 = {self.round_bound}, "
                f"got {self.B}, {self.Bp}, {self.Bpp}")

    @property
    def round_bound(self) -> float:
        return (self.k - 1) * (self.k - 2) / self.delta**2

    @staticmethod
    def make(A: float, Bp: float, Bpp: float, k: int, delta: float) -> "PSCBounds":
        return PSCBounds(float(A), max(0.0, -float(A)), float(Bp), float(Bpp), int(k),
                         float(delta))

    def to_json(self) -> dict:
        return {"A": self.A, "B": self.B, "Bp": self.Bp, "Bpp": self.Bpp, "k": self.k,
                "delta": self.delta}


def default_bounds(k: int, delta: float, A: float = 0.0) -> PSCBounds:
    """B' and B'' at 10% and 60% of the round value (k-1)(k-2)/delta^2."""
    K = (k - 1) * (k - 2) / delta**2
    B = max(0.0, -A)
    return PSCBounds.make(A, B + 0.1 * (K - B), B + 0.6 * (K - B), k, delta)


# ---------------------------------------------------------------------------
# sloping functions


def sloping_slope(b: float, p: float) -> float:
    """Resulting slope q of a sloping family; depends on b and p only."""
    return b * p / 10.0


def _root(fn: Callable, lo: float, hi: float) -> float:
    return float(optimize.brentq(fn, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=200))


@dataclass(frozen=True)
class SlopingFamily:
    """u_{r,s}: identity up to 8a/10, slope 1-sq on [a, 8c/10], slope 1-sq+rsq past c."""

    a: float
    b: float
    p: float
    q: float
    eps: float
    span: float
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def e_point(self, s: float) -> float:
        """The point e with v(8e/10) = 8b/10 for the unsmoothed profile v."""
        a, b, q = self.a, self.b, self.q
        if s == 0.0:
            return b
        w = fc.step_data(-self.span, self.span, [0.85 * a, 0.95 * a], [0.0, -s * 10 * q / a, 0.0])
        v = fc.integrate_twice(fc.as_smooth(w), 0.0, 0.0, 1.0)
        hi = 2.0 * b / (1.0 - s * q) + a
        return _root(lambda e: v(0.8 * e) - 0.8 * b, b, hi)

    def profile(self, r: float, s: float) -> fc.SmoothFn1D:
        key = ("u", float(r), float(s))
        if key not in self._cache:
            a, q = self.a, self.q
            e = self.e_point(s)
            w = fc.step_data(-self.span, self.span,
                             [0.85 * a, 0.95 * a, 0.85 * e, 0.95 * e],
                             [0.0, -s * 10 * q / a, 0.0, r * s * 10 * q / e, 0.0])
            self._cache[key] = fc.integrate_twice(fc.mollify(w, self.eps), 0.0, 0.0, 1.0)
        return self._cache[key]

    def member(self, r: float, s: float) -> tuple:
        """(u_{r,s}, c_{r,s}) with u_{r,s}(c_{r,s}) = b."""
        u = self.profile(r, s)
        key = ("c", float(r), float(s))
        if key not in self._cache:
            self._cache[key] = _root(lambda t: u(t) - self.b, 0.5 * self.b,
                                     u.domain[1] * (1 - 1e-12))
        return u, self._cache[key]

    def to_json(self) -> dict:
        return {"a": self.a, "b": self.b, "p": self.p, "q": self.q, "eps": self.eps}


def sloping_clauses(fam: SlopingFamily, r: float, s: float, n: int = 200) -> dict:
    """Worst margins (>= 0 means satisfied) of the six sloping clauses at n points."""
    u, c = fam.member(r, s)
    a, b, p, q = fam.a, fam.b, fam.p, fam.q
    m = n // 5
    t = np.concatenate([np.linspace(-0.5 * b, 0.8 * a, m), np.linspace(0.8 * a, a, m),
                        np.linspace(a, 0.8 * c, m), np.linspace(0.8 * c, c, m),
                        np.linspace(c, 1.5 * c, n - 4 * m)])
    j = u.jets(t, 2)
    tol1 = SLOPE_TOL * (1 + fam.span)  # roundoff of polynomial pieces grows with the span
    tol2 = CURV_RTOL * 10 * q / a
    out = {}
    left = t <= 0.8 * a
    out["identity_left"] = tol1 * (1 + b) - np.max(np.abs(j[0][left] - t[left]))
    if s == 0.0:
        out["identity_at_s0"] = 1e-10 - np.max(np.abs(j[0] - t))
    out["value_at_c"] = SLOPE_TOL * (1 + b) - abs(u(c) - b)
    out["second_le_pr"] = float(np.min(p * r - j[2])) + tol2
    in1 = (t >= 0.8 * a) & (t <= a)
    in2 = (t >= 0.8 * c) & (t <= c)
    out["concave_part"] = -float(np.max(j[2][in1])) + tol2
    out["convex_part"] = float(np.min(j[2][in2])) + tol2
    rest = ~(in1 | in2)
    out["flat_elsewhere"] = tol2 - float(np.max(np.abs(j[2][rest])))
    mid = (t >= a) & (t <= 0.8 * c)
    right = t >= c
    out["slope_middle"] = tol1 - float(np.max(np.abs(j[1][mid] - (1 - s * q))))
    out["slope_right"] = tol1 - float(np.max(np.abs(j[1][right] - (1 - s * q + r * s * q))))
    out["slope_range"] = min(float(j[1].min()), float(1 - j[1].max())) + tol1
    return {k: float(v) for k, v in out.items()}


def _grid_rs(lo: float) -> np.ndarray:
    return np.linspace(lo, 1.0, 5)


def _verify_family(fam, clauses, r_lo: float) -> float:
    worst = np.inf
    for r in _grid_rs(r_lo):
        for s in np.linspace(0.0, 1.0, 5):
            worst = min(worst, min(clauses(fam, r, s).values()))
    return float(worst)


def sloping_family(a: float, b: float, p: float, span: float | None = None,
                   retries: int = 3) -> SlopingFamily:
    """Sloping family with parameters (a, b, p); clauses checked on a 5x5 (r,s) grid."""
    if not (0.0 < a < 0.8 * b):
        raise ParameterError(f"need 0 < a < 8b/10, got a={a}, b={b}")
    if not p > 0.0:
        raise ParameterError("p must be positive")
    q = sloping_slope(b, p)
    if not 0.0 < q < 1.0:
        raise ConstructionError(f"resulting slope q = {q} is not in (0, 1)")
    span = float(span) if span is not None else 4.0 * b / (1.0 - q)
    eps = a / 40.0
    worst = -np.inf
    for _ in range(retries + 1):
        fam = SlopingFamily(float(a), float(b), float(p), q, eps, span)
        worst = _verify_family(fam, sloping_clauses, 0.0)
        if worst >= 0.0:
            return fam
        eps /= 2.0
    raise ConstructionError(f"sloping clauses fail (worst margin {worst:.3g})")


# ---------------------------------------------------------------------------
# bending functions


@dataclass(frozen=True)
class BendingFamily:
    """v_{r,s}: identity up to alpha/2, slope 1-s near alpha, slope 1-s+rs past d.

    The positive part of v'' is c1/t on [2 alpha + eps/4, gamma] with
    c1 = C (1 - theta) slightly below C, so that after mollification it
    still lies below C/t; gamma is placed so that the slope regained is
    exactly rs.
    """

    C: float
    beta: float
    alpha: float
    gamma: float
    c1: float
    eps: float
    span: float
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def profile(self, r: float, s: float) -> fc.SmoothFn1D:
        key = ("v", float(r), float(s))
        if key not in self._cache:
            al = self.alpha
            lo_pos = 2.0 * al + self.eps / 4.0
            pw = fc.make_piecewise(
                [-self.span, 4 * al / 6, 5 * al / 6, lo_pos, self.gamma, self.span],
                [(), fc.const(-s * 6.0 / al), (), fc.inverse_piece(r * s * self.c1), ()])
            self._cache[key] = fc.integrate_twice(fc.mollify(pw, self.eps), 0.0, 0.0, 1.0)
        return self._cache[key]

    def member(self, r: float, s: float) -> tuple:
        """(v_{r,s}, d_{r,s}); d is inf when v stays below beta on the domain."""
        v = self.profile(r, s)
        key = ("d", float(r), float(s))
        if key not in self._cache:
            hi = v.domain[1] * (1 - 1e-12)
            if v(hi) < self.beta:
                self._cache[key] = math.inf
            else:
                self._cache[key] = _root(lambda t: v(t) - self.beta, self.beta * 0.5, hi)
        return v, self._cache[key]

    def to_json(self) -> dict:
        return {"C": self.C, "beta": self.beta, "alpha": self.alpha, "gamma": self.gamma,
                "c1": self.c1, "eps": self.eps}


def bending_clauses(fam: BendingFamily, r: float, s: float, n: int = 200) -> dict:
    """Worst margins of the six bending clauses at n points."""
    v, d = fam.member(r, s)
    if not math.isfinite(d):
        return {"value_at_d": -math.inf}
    al, C = fam.alpha, fam.C
    m = n // 5
    t = np.concatenate([np.linspace(-fam.beta, al / 2, m), np.linspace(al / 2, 2 * al, m),
                        np.linspace(0.9 * al, 1.1 * al, m), np.linspace(2 * al, d, m),
                        np.linspace(d, 2 * d, n - 4 * m)])
    j = v.jets(t, 2)
    tol1 = SLOPE_TOL * (1 + fam.span)
    tol2 = CURV_RTOL * 6.0 / al
    out = {}
    left = t <= al / 2
    out["identity_left"] = tol1 * (1 + fam.beta) - np.max(np.abs(j[0][left] - t[left]))
    if s == 0.0:
        out["identity_at_s0"] = 1e-10 - np.max(np.abs(j[0] - t))
    out["value_at_d"] = SLOPE_TOL * (1 + fam.beta) - abs(v(d) - fam.beta)
    if s == 1.0:
        near = np.abs(t - al) <= 0.1 * al
        out["flat_near_alpha"] = tol1 - float(np.max(np.abs(j[1][near])))
    pos = t > 0
    out["second_le_Cr_over_t"] = float(np.min(C * r / t[pos] - j[2][pos])) + tol2
    outside = (t < 2 * al) | (t > d)
    out["concave_outside"] = -float(np.max(j[2][outside])) + tol2
    right = t >= d
    out["slope_right"] = LOG_TOL - float(np.max(np.abs(j[1][right] - (1 - s + r * s))))
    out["slope_range"] = min(float(j[1].min()), float(1 - j[1].max())) + tol1
    return {k: float(v) for k, v in out.items()}


def bending_family(C: float, beta: float, span: float | None = None,
                   retries: int = 3) -> BendingFamily:
    """Bending family with parameters (C, beta); clauses checked on a 5x5 (r,s) grid."""
    if not (C > 0.0 and beta > 0.0):
        raise ParameterError("C and beta must be positive")
    alpha = beta / 4.0 * math.exp(-1.0 / C)
    if not alpha > 0.0:
        raise ConstructionError(f"attacking point underflows for C = {C}")
    theta = min(1.0, C) / 16.0
    c1 = C * (1.0 - theta)
    eps = min(8.0 * theta, 1.0 / 16.0) * alpha
    span = float(span) if span is not None else 8.0 * beta / 0.2
    worst = -np.inf
    for _ in range(retries + 1):
        lo_pos = 2.0 * alpha + eps / 4.0
        gamma = lo_pos * math.exp(1.0 / c1)
        fam = BendingFamily(float(C), float(beta), alpha, gamma, c1, eps, span)
        worst = _verify_family(fam, bending_clauses, 0.2)
        if worst >= 0.0:
            return fam
        eps /= 2.0
    raise ConstructionError(f"bending clauses fail (worst margin {worst:.3g})")


# ---------------------------------------------------------------------------
# easy estimate


def composition_sigma(k: int, f: fc.SmoothFn1D, h_jets: np.ndarray) -> np.ndarray:
    """sigma(f o h) from sigma(f) at h, the tube term and the h'' term."""
    h0, h1, h2 = h_jets[0], h_jets[1], h_jets[2]
    fj = f.jets(h0, 2)
    sf = (k - 1) * ((k - 2) * (1 - fj[1]) * (1 + fj[1]) / fj[0] ** 2 - 2 * fj[2] / fj[0])
    return (h1**2 * sf + (1 - h1**2) * (k - 1) * (k - 2) / fj[0] ** 2
            - 2 * (k - 1) * fj[1] * h2 / fj[0])


def easy_estimate_check(f: WarpSpec, h: fc.SmoothFn1D, bounds: PSCBounds, r: float,
                        s: float, n: int = 400) -> CurvatureReport:
    """Check both hypotheses of the easy estimate and sigma(f o h) >= B' on [0, s].

    checks: ``hyp_round`` = min (k-1)(k-2) - B'' f^2 on [0, r];
    ``hyp_second`` = min B''-B' f(h)/(2(k-1)) - h'' where h <= r;
    ``range`` = r - max h on [0, s].  When a hypothesis fails the report
    still carries the sampled values, but its name says the conclusion is
    not asserted and it does not pass.
    """
    k = bounds.k
    if f.k != k:
        raise ParameterError("warp and bounds disagree on k")
    if not (0 < r <= f.R_bar and s > 0):
        raise ParameterError("need 0 < r <= R and s > 0")
    tr = np.linspace(0.0, r, n)
    hyp1 = float(np.min((k - 1) * (k - 2) - bounds.Bpp * f.f(tr) ** 2))
    ts = np.linspace(0.0, s, n)
    hj = h.jets(ts, 2)
    inside = hj[0] <= r
    fh = f.f(np.clip(hj[0][inside], 0.0, f.R_bar))
    hyp2 = float(np.min(0.5 * (bounds.Bpp - bounds.Bp) * fh / (k - 1) - hj[2][inside]))
    rng = float(r - hj[0].max())
    g = fc.Composed(f.f, fc.restrict(h, 0.0, s))
    vals = sigma_fn(g, k, ts)
    name = "easy_estimate"
    if min(hyp1, hyp2, rng) < 0:
        name += " [hypotheses fail: conclusion not asserted]"
    return make_report(name, {"t": ts}, vals, bounds.Bp,
                       {"hyp_round": hyp1, "hyp_second": hyp2, "range": rng})


# ---------------------------------------------------------------------------
# input families (radial coordinate x = |x| in [0, 1])


def extend_constant(f: fc.SmoothFn1D, cut: float, hi: float) -> fc.SmoothFn1D:
    """f on [0, cut] continued by the constant f(cut) up to hi (f must be flat at cut)."""
    if hi <= cut:
        return fc.restrict(f, 0.0, cut)
    return fc.Glued((0.0, float(cut), float(hi)),
                     (f, fc.constant(float(f(cut)), cut, hi)))


def torpedo_warp(rho: float, hi: float, eps: float = 0.05) -> fc.SmoothFn1D:
    """The torpedo h_rho on [0, hi], constant past its cylinder start."""
    from .torpedo import build_torpedo
    tp = build_torpedo(rho, eps)
    return extend_constant(tp.f, rho * (math.pi / 2 + 2 * eps), hi)


@dataclass(frozen=True)
class WarpFamily:
    """x -> warping function on [0, hi]; x is the radial coordinate of the disc."""

    name: str
    R: float
    delta: float
    hi: float
    members: Callable
    grid: Callable | None = None
    scale: float | None = None

    def __call__(self, x: float) -> fc.SmoothFn1D:
        return self.members(float(x))

    def t_grid(self, x: float, n: int) -> np.ndarray:
        """Sample points on [0, R]; families with fine structure supply their own."""
        if self.grid is not None:
            return self.grid(float(x), n)
        return np.linspace(0.0, self.R, n)

    @property
    def feature_scale(self) -> float:
        """Smallest length scale of the members (used for the small-t switch)."""
        return self.delta if self.scale is None else self.scale


def fixture_family(name: str, delta: float = 1.0, R: float | None = None,
                   eps: float = 0.05, wide_eps: float = 0.3) -> WarpFamily:
    """Test families: ``torpedo`` (h_delta for every x) and ``blend`` (h_delta
    blended toward the wider-capped torpedo for x <= 1/2, weight cos^2(pi x))."""
    R = float(R) if R is not None else 2.2 * delta
    hi = 4.0 * R
    base = torpedo_warp(delta, hi, eps)
    if name == "torpedo":
        return WarpFamily(name, R, delta, hi, lambda x: base)
    if name == "blend":
        wide = torpedo_warp(delta, hi, wide_eps)

        def members(x):
            w = math.cos(math.pi * x) ** 2 if x < 0.5 else 0.0
            if w == 0.0:
                return base
            return fc.LinearCombination((1.0 - w, w), (base, wide))

        return WarpFamily(name, R, delta, hi, members)
    raise ParameterError(f"unknown fixture {name!r}")


# ---------------------------------------------------------------------------
# flattening homotopy


def glue_warp(f: fc.SmoothFn1D, h: fc.SmoothFn1D, S: float, end: float) -> fc.SmoothFn1D:
    """f o h on [0, S], continued past S by the translate t -> f(t - S + h(S)).

    This is the warping function of the metric obtained by reparametrizing
    with h up to the gluing point S.  A gluing point at or past ``end``
    leaves f o h on [0, end].
    """
    comp = fc.Composed(f, h)
    if not S < end:
        return fc.restrict(comp, 0.0, end)
    shift = S - float(h(S))
    return fc.Glued((0.0, float(S), float(end)), (comp, fc.Shifted(f, shift, 0.0)))


def _solve_point(fn: fc.SmoothFn1D, target: float, lo: float) -> float:
    """The point where the increasing function fn reaches target (inf if never)."""
    hi = fn.domain[1] * (1 - 1e-12)
    if fn(hi) < target:
        return math.inf
    return _root(lambda t: fn(t) - target, lo, hi)


@dataclass(frozen=True)
class FlattenConstants:
    S: float
    F: float
    p: float
    q: float
    T: float
    C: float
    alpha: float
    eta: float

    def to_json(self) -> dict:
        return dict(self.__dict__)


def choose_flatten_constants(family: WarpFamily, bounds: PSCBounds, R: float,
                             xs: Sequence[float], n_t: int = 2001) -> tuple:
    """S, F, p, q, T, C and the attacking point, following the constant chain.

    Returns (constants without eta, bending family, sloping family).
    """
    k, Bp, Bpp, delta = bounds.k, bounds.Bp, bounds.Bpp, bounds.delta
    K = (k - 1) * (k - 2)
    t = np.linspace(0.0, R, n_t)
    ok = np.ones_like(t, dtype=bool)
    for x in xs:
        j = family(x).jets(t, 2)
        ok &= (j[1] >= -1e-12) & (j[1] <= 1 + 1e-12) & (j[2] <= 1e-12)
    prefix = np.logical_and.accumulate(ok)
    cap = min(delta, math.sqrt(K / Bpp), R * (1 - 1e-9))
    admissible = prefix & (t <= cap) & (t > 0)
    if not np.any(admissible):
        raise InfeasibleError("f' in [0,1] and f'' <= 0 on [0,S], B''S^2 <= (k-1)(k-2), S <= delta")
    S = float(t[admissible][-1])
    F = min(float(family(x)(0.8 * S)) for x in xs)
    if not F > 0:
        raise InfeasibleError("F = inf f_x(8S/10) > 0")
    p = (Bpp - Bp) * F / (2 * (k - 1))
    q = sloping_slope(S, p)
    if not 0 < q < 1:
        raise InfeasibleError("0 < q < 1", f"q = {q}")
    X = K * (1 - (1 - q) ** 2)
    T_max = 0.8 * S if Bp == 0 else min(0.8 * S, math.sqrt(X / Bp) * (1 - 1e-9))

    def neg_log_alpha(T):
        C = (X - Bp * T * T) / (2 * (k - 1))
        return -(math.log(T / 4) - 1.0 / C) if C > 0 else math.inf

    res = optimize.minimize_scalar(neg_log_alpha, bounds=(1e-6 * T_max, T_max),
                                   method="bounded", options={"xatol": 1e-10 * T_max})
    T = float(res.x)
    C = (X - Bp * T * T) / (2 * (k - 1))
    if not (0 < T <= 0.8 * S and C > 0 and Bp * T * T + 2 * (k - 1) * C <= X * (1 + 1e-12)):
        raise InfeasibleError("B'T^2 + 2(k-1)C <= (k-1)(k-2)(1-(1-q)^2)")
    span = 4.0 * R
    bend = bending_family(C, T, span=span)
    if not bend.alpha < 0.8 * S:
        raise InfeasibleError("alpha < 8S/10")
    slope = sloping_family(bend.alpha, S, p, span=span)
    return (S, F, p, q, T, C, bend.alpha), bend, slope


def eta_bound(bounds: PSCBounds, p: float, C: float, alpha: float) -> float:
    """Largest eta with eta max{p, C/(2 alpha)} <= (B''-B') delta / (2(k-1))."""
    k = bounds.k
    return min(1.0, (bounds.Bpp - bounds.Bp) * bounds.delta / (2 * (k - 1))
               / max(p, C / (2 * alpha)))


@dataclass(frozen=True)
class FlattenHomotopy:
    """(lambda, x) -> warping function on [0, R] flattening the family near R."""

    family: WarpFamily
    bounds: PSCBounds
    R: float
    const: FlattenConstants
    bend: BendingFamily
    slope: SlopingFamily
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def end(self) -> float:
        return 2.0 * self.R

    def damping(self, x: float) -> float:
        """First family parameter r: 1 up to 2/3, ramps to eta at 5/6."""
        eta = self.const.eta
        if x <= 2 / 3:
            return 1.0
        if x >= 5 / 6:
            return eta
        return 6 * (eta - 1) * x + 5 - 4 * eta

    def pull(self, x: float) -> float:
        """Translation s = 6R|x| - 5R of the reparametrization for |x| >= 5/6."""
        s = 6 * self.R * x - 5 * self.R
        return s if s > 1e-12 * self.R else 0.0

    def collar_point(self, x: float) -> float:
        """tau(x): the flat point of the lambda = 2/3 warp (continuous ramp reading)."""
        return self.const.alpha + self.pull(x)

    def reparametrization(self, lam: float, x: float) -> fc.SmoothFn1D:
        """h_{lambda}(t - s) + s with h = u_{r,3lam} or u_{r,1} o v_{r,3lam-1}."""
        lam = min(lam, 2 / 3)
        r = self.damping(x)
        if lam <= 1 / 3:
            h = self.slope.profile(r, 3 * lam)
        else:
            h = fc.Composed(self.slope.profile(r, 1.0), self.bend.profile(r, 3 * lam - 1))
        s = self.pull(x)
        return fc.Shifted(h, s, s) if s > 0 else h

    def _warp_to_two_thirds(self, lam: float, x: float) -> fc.SmoothFn1D:
        R, S, T, end = self.R, self.const.S, self.const.T, self.end
        lam = min(lam, 2 / 3)
        f = self.family(x)
        r = self.damping(x)
        if x > 5 / 6:
            H = self.reparametrization(lam, x)
            return glue_warp(f, H, _solve_point(H, R, 0.0), end)
        if lam <= 1 / 3:
            u, c = self.slope.member(r, 3 * lam)
            if x <= 1 / 2:
                g = c
            elif x <= 2 / 3:
                g = c + 6 * (R - S) * x + 3 * (S - R)
            else:
                g = _solve_point(u, R, S)
            return glue_warp(f, u, g, end)
        u1, c1 = self.slope.member(r, 1.0)
        v, d = self.bend.member(r, 3 * lam - 1)
        if x <= 1 / 2:
            g1, g2 = c1, d
        elif x <= 2 / 3:
            g1 = c1 + (6 * x - 3) * (R - S)
            g2 = d + (6 * x - 3) * (c1 + R - S - T)
        else:
            g1 = _solve_point(u1, R, S)
            g2 = _solve_point(v, g1, 0.0) if math.isfinite(g1) else math.inf
        return glue_warp(glue_warp(f, u1, g1, end + abs(g1 if math.isfinite(g1) else 0)),
                         v, g2, end)

    def warp_fn(self, lam: float, x: float) -> fc.SmoothFn1D:
        key = (float(lam), float(x))
        if key in self._cache:
            return self._cache[key]
        if not (0 <= lam <= 1 and 0 <= x <= 1):
            raise ParameterError("lambda and x must lie in [0, 1]")
        W = self._warp_to_two_thirds(lam, x)
        if lam > 2 / 3:
            # collar stretch: insert a cylinder of length L at the flat point tau
            tau = self.collar_point(x)
            L = (3 * lam - 2) * max(0.0, self.R - self.pull(x))
            if L > 0 and tau < self.end:
                W = fc.Glued((0.0, tau, tau + L, self.end),
                             (W, fc.constant(float(W(tau)), tau, tau + L), fc.Shifted(W, L, 0.0)))
        W = fc.restrict(W, 0.0, self.R)
        self._cache[key] = W
        return W

    def __call__(self, lam: float, x: float) -> WarpSpec:
        return WarpSpec(self.bounds.k, self.warp_fn(lam, x), self.bounds.A)

    def t_grid(self, x: float, n: int) -> np.ndarray:
        """Uniform grid on [0, R] refined geometrically past the pull point."""
        R, al = self.R, self.const.alpha
        s = self.pull(x)
        fine = s + np.geomspace(al / 50, R, n)
        t = np.concatenate([np.linspace(0.0, R, n), fine[fine <= R]])
        return np.unique(t)


def flatten_homotopy(family: WarpFamily, bounds: PSCBounds, R: float | None = None,
                     n_x: int = 7, n_t: int = 200, eta: float | None = None,
                     max_halvings: int = 12) -> FlattenHomotopy:
    """Flattening homotopy for a radial family with f_x = h_delta for x >= 1/2.

    eta starts at the bound eta max{p, C/(2 alpha)} <= (B''-B') delta/(2(k-1))
    and is halved until the pulled-apart slices |x| in [5/6, 1] satisfy
    sigma >= B' on the check grid.
    """
    R = float(R) if R is not None else family.R
    xs = np.linspace(0.0, 1.0, 2 * n_x + 1)
    _check_family(family, bounds, R, xs)
    (S, F, p, q, T, C, alpha), bend, slope = choose_flatten_constants(family, bounds, R, xs)
    eta0 = eta_bound(bounds, p, C, alpha) if eta is None else float(eta)
    for _ in range(max_halvings + 1):
        const = FlattenConstants(S, F, p, q, T, C, alpha, eta0)
        hom = FlattenHomotopy(family, bounds, R, const, bend, slope)
        rep = verify_flatten(hom, n_lam=5, xs=np.linspace(5 / 6, 1.0, 5), n_t=n_t,
                             endpoint=False)
        if rep.passed:
            return hom
        eta0 /= 2
    raise InfeasibleError("eta max{p, C/(2 alpha)} small enough for sigma >= B'",
                          f"no eta >= {eta0:.3g} works")


def _check_family(family: WarpFamily, bounds: PSCBounds, R: float, xs) -> None:
    k = bounds.k
    t = np.linspace(0.0, R, 801)
    ref = family(1.0).jets(t, 2)
    for x in xs:
        f = family(x)
        sig = sigma_fn(f, k, t)
        if sig.min() < bounds.Bpp:
            raise ParameterError(f"family has sigma < B'' at x = {x} (min {sig.min():.4g})")
        if x >= 0.5 and np.max(np.abs(f.jets(t, 2) - ref)) > 1e-12:
            raise ParameterError("family must equal h_delta for x >= 1/2")


def verify_flatten(hom: FlattenHomotopy, n_lam: int = 7, xs=None, n_t: int = 200,
                   endpoint: bool = True) -> CurvatureReport:
    """A + sigma >= B' over the (lambda, x, t) grid, plus the endpoint properties.

    checks: ``endpoint_flat`` (|f'_{1,x}| <= 1e-9 near R), ``endpoint_concave``
    (f''_{1,x} <= 0), ``endpoint_range`` (0 <= f_{1,x} <= delta) and
    ``boundary_fixed`` (the x = 1 slice equals f_1 on [0, R] at every lambda).
    """
    b = hom.bounds
    xs = np.linspace(0.0, 1.0, 7) if xs is None else np.asarray(xs, dtype=float)
    lams = np.linspace(0.0, 1.0, n_lam)
    t_switch = min(1e-3 * hom.R, hom.const.alpha / 100)
    cols = {"lambda": [], "x": [], "t": []}
    vals = []
    for x in xs:
        t = hom.t_grid(x, n_t)
        for lam in lams:
            sig = sigma_fn(hom.warp_fn(lam, x), b.k, t, t_switch)
            vals.append(b.A + sig)
            cols["lambda"].append(np.full_like(t, lam))
            cols["x"].append(np.full_like(t, x))
            cols["t"].append(t)
    checks = {}
    if endpoint:
        checks.update(_endpoint_checks(hom, xs, n_t))
        checks["boundary_fixed"] = _boundary_margin(hom, lams, n_t)
    samples = {k: np.concatenate(v) for k, v in cols.items()}
    return make_report("flatten", samples, np.concatenate(vals), b.Bp, checks)


def _endpoint_checks(hom: FlattenHomotopy, xs, n_t: int) -> dict:
    R, al, delta = hom.R, hom.const.alpha, hom.bounds.delta
    flat, conc, rng = np.inf, np.inf, np.inf
    for x in xs:
        W = hom.warp_fn(1.0, x)
        near = np.linspace(R - al / 4, R, 21)
        flat = min(flat, 1e-9 - float(np.max(np.abs(W.jets(near, 1)[1]))))
        j = W.jets(hom.t_grid(x, n_t), 2)
        scale = 1.0 / al
        conc = min(conc, -float(np.max(j[2])) + 1e-9 * scale)
        rng = min(rng, float(j[0].min()) + 1e-12, float(delta - j[0].max()) + 1e-12)
    return {"endpoint_flat": flat, "endpoint_concave": conc, "endpoint_range": rng}


def _boundary_margin(hom: FlattenHomotopy, lams, n_t: int) -> float:
    t = hom.t_grid(1.0, n_t)
    ref = hom.family(1.0).jets(t, 2)
    worst = 0.0
    for lam in lams:
        worst = max(worst, float(np.max(np.abs(hom.warp_fn(lam, 1.0).jets(t, 2) - ref))))
    return 1e-12 - worst


# ---------------------------------------------------------------------------
# torpedo matching


def flattened_family(hom: FlattenHomotopy) -> WarpFamily:
    """Terminal slices of a flattening, reindexed by x -> min(1, 2x).

    The reindexing makes every member with x >= 1/2 equal to the x = 1 slice,
    which the flattening leaves unchanged.
    """
    def members(x):
        return hom.warp_fn(1.0, min(1.0, 2.0 * x))

    def grid(x, n):
        return hom.t_grid(min(1.0, 2.0 * x), n)

    return WarpFamily(hom.family.name + "-flat", hom.R, hom.bounds.delta, hom.R,
                      members, grid, hom.const.alpha)


def endgame_bounds(bounds: PSCBounds) -> PSCBounds:
    """Bounds for matching a flattened family: its guaranteed B' becomes B''."""
    return PSCBounds.make(bounds.A, 0.5 * (bounds.B + bounds.Bp), bounds.Bp, bounds.k,
                          bounds.delta)


@lru_cache(maxsize=1)
def _step_constants() -> tuple:
    """sup|H'| w and sup|H''| w^2 for the smooth step H of width w."""
    H = fc.smooth_step(0.0, 1.0, 0.0, 1.0)
    j = H.jets(np.linspace(0.0, 1.0, 4001), 2)
    return float(np.max(np.abs(j[1]))), float(np.max(np.abs(j[2])))


def _collar_estimate(dq: float, beta: float, a1, a2, bounds: PSCBounds):
    """Lower bound for sigma(a_{p,q}) from |q - p| = dq, beta <= a_{p,q} <= delta."""
    k = bounds.k
    K = (k - 1) * (k - 2)
    return (K / bounds.delta**2 - K * dq**2 * np.asarray(a1) ** 2 / beta**2
            - 2 * (k - 1) * dq * np.abs(a2) / beta)


def collar_length(dq: float, beta: float, bounds: PSCBounds) -> float:
    """Smallest width of the smooth step for which the estimate reaches B'."""
    c1, c2 = _step_constants()
    k = bounds.k
    K = (k - 1) * (k - 2)
    room = K / bounds.delta**2 - bounds.Bp
    need = K * dq**2 * c1**2 / beta**2 + 2 * (k - 1) * dq * c2 / beta
    return math.sqrt(need / room) if need > 0 else 0.0


def collar_interp(p_val: float, q_val: float, beta: float, R: float, R_inf: float | None,
                  bounds: PSCBounds, n: int = 401,
                  max_doublings: int = 8) -> tuple[fc.SmoothFn1D, CurvatureReport]:
    """a_{p,q} = (1 - a) p + a q on [R, R_inf] with a smooth step a.

    R_inf defaults to R plus the width predicted by the estimate; the width
    R_inf - R is doubled until the sampled estimate is at least B'.
    """
    delta = bounds.delta
    tol = 1e-12 * delta
    if not (0 < beta <= delta + tol and beta - tol <= p_val <= delta + tol
            and beta - tol <= q_val <= delta + tol):
        raise ParameterError("need 0 < beta <= p, q <= delta")
    dq = abs(q_val - p_val)
    if R_inf is None:
        R_inf = R + max(collar_length(dq, beta, bounds), 1e-3 * R) * 1.05
    if R_inf < R:
        raise ParameterError("R_inf must be at least R")
    width = R_inf - R
    if dq > 0 and width <= 0:
        raise InfeasibleError("sigma(a_{p,q}) >= B' on [R, R_inf]",
                              "no room to interpolate (R_inf = R)")
    if width <= 0:
        width = 1e-3 * R
    for _ in range(max_doublings + 1):
        R_inf = R + width
        H = fc.smooth_step(R, R_inf, R, R_inf)
        a = fc.restrict(fc.LinearCombination((q_val - p_val,), (H,), (p_val, 0.0)), R, R_inf)
        t = np.linspace(R, R_inf, n)
        j = H.jets(t, 2)
        est = _collar_estimate(dq, beta, j[1], j[2], bounds)
        if est.min() >= bounds.Bp:
            vals = sigma_fn(a, bounds.k, t, t_switch=0.0)
            rep = make_report("collar_interp", {"t": t}, vals, bounds.Bp,
                              {"estimate": float(est.min() - bounds.Bp)})
            return a, rep
        width *= 2.0
    raise InfeasibleError("sigma(a_{p,q}) >= B' on [R, R_inf]",
                          f"estimate below B' after {max_doublings} doublings")


@dataclass(frozen=True)
class MatchHomotopy:
    """(lambda, x) -> warping function on [0, R_inf + R] ending at the torpedo h_delta."""

    family: WarpFamily
    bounds: PSCBounds
    R: float
    R_inf: float
    eps: float
    nodes: tuple
    thetas: tuple
    beta: float
    A_cc: float
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def hi(self) -> float:
        return self.R / min(self.thetas) + 2.0 * self.R

    def theta(self, x: float) -> float:
        return 1.0 if x >= 0.5 else float(np.interp(x, self.nodes, self.thetas))

    def delta_x(self, x: float) -> float:
        return float(self.family(x)(self.R))

    def base(self, x: float) -> fc.SmoothFn1D:
        """f_x continued by its constant value past R."""
        key = ("base", float(x))
        if key not in self._cache:
            self._cache[key] = extend_constant(self.family(x), self.R, self.hi)
        return self._cache[key]

    def core(self, lam: float, x: float) -> fc.SmoothFn1D:
        """The thirds formula on [0, R]."""
        R, th = self.R, self.theta(x)
        if lam <= 1 / 3:
            f = fc.scale_warp(self.base(x), 3 * lam * th + 1 - 3 * lam)
        elif lam <= 2 / 3:
            dx = self.delta_x(x)
            f = fc.LinearCombination(
                (2 - 3 * lam, 3 * lam - 1),
                (fc.restrict(fc.scale_warp(self.base(x), th), 0.0, R),
                 fc.restrict(fc.scale_warp(torpedo_warp(dx, self.hi, self.eps), th), 0.0, R)))
        else:
            rho = (3 - 3 * lam) * th * self.delta_x(x) + (3 * lam - 2) * self.bounds.delta
            f = torpedo_warp(rho, R, self.eps)
        return fc.restrict(f, 0.0, R)

    def warp_fn(self, lam: float, x: float) -> fc.SmoothFn1D:
        key = (float(lam), float(x))
        if key in self._cache:
            return self._cache[key]
        if not (0 <= lam <= 1 and 0 <= x <= 1):
            raise ParameterError("lambda and x must lie in [0, 1]")
        R, R_inf = self.R, self.R_inf
        core = self.core(lam, x)
        p_val, q_val = float(core(R)), self.delta_x(x)
        H = fc.smooth_step(R, R_inf, R, R_inf)
        collar = fc.LinearCombination((q_val - p_val,), (H,), (p_val, 0.0))
        W = fc.Glued((0.0, R, R_inf, R_inf + R),
                     (core, collar, fc.constant(q_val, R_inf, R_inf + R)))
        self._cache[key] = W
        return W

    def __call__(self, lam: float, x: float) -> WarpSpec:
        return WarpSpec(self.bounds.k, self.warp_fn(lam, x), self.bounds.A)

    def t_grid(self, x: float, th: float, n: int) -> np.ndarray:
        """Family grid, its image under t -> th t, and a torpedo-cap grid."""
        R = self.R
        g = self.family.t_grid(x, n)
        cap = th * self.delta_x(x) * np.linspace(0.0, 2.0, n)
        t = np.concatenate([g, th * g, cap])
        return np.unique(t[(t >= 0) & (t <= R)])

    def t_switch(self, x: float, th: float) -> float:
        scale = min(self.family.feature_scale, self.delta_x(x))
        return min(1e-3 * self.R, th * scale / 100)


def _combo_sigma(F: fc.SmoothFn1D, G: fc.SmoothFn1D, mus, k: int, t: np.ndarray,
                 t_switch: float) -> float:
    """min over mu of sigma((1 - mu) F + mu G) on t."""
    big = t > t_switch
    jF, jG = F.jets(t[big], 2), G.jets(t[big], 2)
    worst = math.inf
    for mu in mus:
        j = (1 - mu) * jF + mu * jG
        v = sigma_from_jets(k, j[0], j[1], j[2])
        if np.any(~big):
            v = np.concatenate([v, sigma_fn(fc.convex_combine(F, G, float(mu)), k, t[~big],
                                            t_switch)])
        worst = min(worst, float(v.min()))
    return worst


def _theta_predicate(hom: MatchHomotopy, x: float, th: float, mus, n_t: int) -> float:
    """min sigma((1-mu) f_x^th + mu h_{delta_x}^th) - B'' on [0, R]."""
    R = hom.R
    F = fc.restrict(fc.scale_warp(hom.base(x), th), 0.0, R)
    G = fc.restrict(fc.scale_warp(torpedo_warp(hom.delta_x(x), hom.hi, hom.eps), th), 0.0, R)
    t = hom.t_grid(x, th, n_t)
    return _combo_sigma(F, G, mus, hom.bounds.k, t, hom.t_switch(x, th)) - hom.bounds.Bpp


def _bisect_theta(probe: Callable, tol: float = 1e-4, max_halvings: int = 30) -> float:
    """Largest sampled theta in (0, 1] with probe(theta) >= 0, to tolerance tol."""
    if probe(1.0) >= 0:
        return 1.0
    hi, lo = 1.0, 0.5
    for _ in range(max_halvings):
        if probe(lo) >= 0:
            break
        hi, lo = lo, lo / 2
    else:
        raise InfeasibleError("sigma((1-mu) f^theta + mu h^theta) >= B''",
                              "no scale theta found")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if probe(mid) >= 0:
            lo = mid
        else:
            hi = mid
    return lo


def _check_flattened(family: WarpFamily, bounds: PSCBounds, R: float, eps: float,
                     xs, n_t: int) -> None:
    delta = bounds.delta
    h = torpedo_warp(delta, R, eps)
    for x in xs:
        f = family(x)
        t = family.t_grid(x, n_t)
        j = f.jets(t, 2)
        scale = family.feature_scale
        if np.any(j[1] < -1e-12) or np.any(j[1] > 1 + 1e-12) or np.any(j[2] > 1e-9 / scale):
            raise ParameterError(f"member x = {x} is not concave with f' in [0, 1]")
        if np.max(j[0]) > delta * (1 + 1e-12):
            raise ParameterError(f"member x = {x} exceeds delta")
        near = np.linspace(R * (1 - 1e-6), R, 5)
        if np.max(np.abs(f.jets(near, 1)[1])) > 1e-9:
            raise ParameterError(f"member x = {x} is not flat near R")
        if x >= 0.5 and np.max(np.abs(j - h.jets(t, 2))) > 1e-9:
            raise ParameterError("members with x >= 1/2 must equal h_delta")


def torpedo_match_homotopy(family: WarpFamily, bounds: PSCBounds, R: float | None = None,
                           eps: float = 0.05, n_x: int = 7, n_t: int = 200,
                           n_mu: int = 11) -> MatchHomotopy:
    """Deform a flattened family to the torpedo h_delta on [0, R].

    theta(x) is found by bisection at the nodes x < 1/2 of an (2 n_x + 1)-point
    grid so that every sampled combination (1-mu) f_x^theta + mu h_{delta_x}^theta
    has sigma >= B''; between nodes theta is interpolated from the neighbour
    minima.  The collar [R, R_inf] is sized for the worst pair p = beta, q = delta.
    """
    R = float(R) if R is not None else family.R
    xs = np.linspace(0.0, 1.0, 2 * n_x + 1)
    _check_flattened(family, bounds, R, eps, xs, n_t)
    mus = np.linspace(0.0, 1.0, n_mu)
    k = bounds.k
    # convex combinations with h_delta stay psc
    hd = torpedo_warp(bounds.delta, R, eps)
    A_cc = math.inf
    for x in xs:
        f = fc.restrict(family(x), 0.0, R)
        t = family.t_grid(x, n_t)
        ts = min(1e-3 * R, min(family.feature_scale, float(f(R))) / 100)
        A_cc = min(A_cc, _combo_sigma(f, hd, mus, k, t, ts))
    if not A_cc > 0:
        raise InfeasibleError("sigma((1-lambda) f_x + lambda h_delta) > 0")
    probe_hom = MatchHomotopy(family, bounds, R, 2 * R, eps, (0.0, 1.0), (2 ** -30, 1.0),
                              0.0, A_cc)
    nodes = tuple(float(x) for x in xs if x < 0.5) + (0.5, 1.0)
    raw = [_bisect_theta(lambda th, x=x: _theta_predicate(probe_hom, x, th, mus, n_t))
           for x in nodes[:-2]]
    safe = [min(raw[max(i - 1, 0):i + 2]) for i in range(len(raw))]
    thetas = tuple(safe) + (1.0, 1.0)
    if _theta_predicate(probe_hom, 0.5, 1.0, mus, n_t) < 0:
        raise InfeasibleError("theta(x) = 1 for x >= 1/2", "h_delta slice fails B''")
    hom = MatchHomotopy(family, bounds, R, 2 * R, eps, nodes, thetas, 0.0, A_cc)
    beta = min(hom.theta(x) * hom.delta_x(x) for x in np.linspace(0.0, 1.0, 101))
    _, rep = collar_interp(beta, bounds.delta, beta, R, None, bounds)
    R_inf = float(rep.samples["t"][-1])
    return MatchHomotopy(family, bounds, R, R_inf, eps, nodes, thetas, beta, A_cc)


def verify_match(hom: MatchHomotopy, n_lam: int = 7, xs=None, n_t: int = 200,
                 n_collar: int = 201) -> CurvatureReport:
    """sigma >= B'' on [0, R] over the (lambda, x, t) grid.

    checks: ``collar`` (sigma - B' on [R, R_inf]), ``terminal_torpedo``
    (f_{1,x} = h_delta on [0, R] to 1e-9), ``theta_outer`` (theta = 1 for
    x >= 1/2), ``boundary_fixed`` (x = 1 slice constant in lambda) and
    ``convex_positive`` (min sigma of convex combinations with h_delta).
    """
    b, R = hom.bounds, hom.R
    xs = np.linspace(0.0, 1.0, 7) if xs is None else np.asarray(xs, dtype=float)
    lams = np.linspace(0.0, 1.0, n_lam)
    cols = {"lambda": [], "x": [], "t": []}
    vals = []
    collar = math.inf
    tc = np.linspace(R, hom.R_inf, n_collar)
    for x in xs:
        th = hom.theta(x)
        t = hom.t_grid(x, th, n_t)
        for lam in lams:
            W = hom.warp_fn(lam, x)
            vals.append(sigma_fn(W, b.k, t, hom.t_switch(x, th)))
            cols["lambda"].append(np.full_like(t, lam))
            cols["x"].append(np.full_like(t, x))
            cols["t"].append(t)
            collar = min(collar, float(sigma_fn(W, b.k, tc, 0.0).min()))
    h = torpedo_warp(b.delta, R, hom.eps)
    term = 0.0
    for x in xs:
        t = hom.t_grid(x, 1.0, n_t)
        term = max(term, float(np.max(np.abs(hom.warp_fn(1.0, x).jets(t, 2) - h.jets(t, 2)))))
    t1 = hom.t_grid(1.0, 1.0, n_t)
    ref = hom.family(1.0).jets(t1, 2)
    fixed = max(float(np.max(np.abs(hom.warp_fn(lam, 1.0).jets(t1, 2) - ref))) for lam in lams)
    outer = max([abs(hom.theta(x) - 1.0) for x in xs if x >= 0.5], default=0.0)
    checks = {"collar": collar - b.Bp, "terminal_torpedo": 1e-9 - term,
              "theta_outer": 1e-12 - outer, "boundary_fixed": 1e-9 - fixed,
              "convex_positive": hom.A_cc}
    samples = {key: np.concatenate(v) for key, v in cols.items()}
    return make_report("torpedo_match", samples, np.concatenate(vals), b.Bpp, checks)


# ---------------------------------------------------------------------------
# path approximation and the collar transition


def _trapezoid(i: int, n: int, lo: float, hi: float) -> fc.PiecewiseFn:
    """1 on [i/n - 1/(4n), i/n + 1/(4n)], linear to 0 at i/n -+ 3/(4n)."""
    c, h = i / n, 1.0 / (4 * n)
    bps, pieces = [lo], []
    if i > 0:
        bps += [c - 3 * h, c - h]
        pieces += [fc.const(0.0), fc.poly([0.0, 1.0 / (2 * h)], c - 3 * h)]
    if i < n:
        bps += [c + h, c + 3 * h]
        pieces += [fc.const(1.0), fc.poly([1.0, -1.0 / (2 * h)], c + h), fc.const(0.0)]
    else:
        pieces += [fc.const(1.0)]
    return fc.make_piecewise(bps + [hi], pieces)


@dataclass(frozen=True)
class PartitionOfUnity:
    """lambda_{n,i}, i = 0..n: mollified trapezoids normalized by their sum.

    lambda_{n,i} vanishes outside ((i-1)/n, (i+1)/n); lambda_{n,0}(0) = 1 and
    lambda_{n,n}(1) = 1 exactly.
    """

    n: int
    bumps: tuple

    def jets(self, t) -> np.ndarray:
        """Array (n+1, 3, len(t)) of lambda_i, lambda_i', lambda_i''."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        phi = np.zeros((self.n + 1, 3, t.size))
        reach = (3 / 4 + 1 / 32) / self.n
        for i, b in enumerate(self.bumps):
            # the trapezoids are exactly 0 or 1 away from their ramps
            near = np.abs(t - i / self.n) < reach
            if i == 0:
                near |= t < 0
            if i == self.n:
                near |= t > 1
            if np.any(near):
                phi[i][:, near] = b.jets(t[near], 2)
        S0, S1, S2 = phi.sum(axis=0)
        f0, f1, f2 = phi[:, 0], phi[:, 1], phi[:, 2]
        out = np.empty_like(phi)
        out[:, 0] = f0 / S0
        out[:, 1] = f1 / S0 - f0 * S1 / S0**2
        out[:, 2] = (f2 / S0 - 2 * f1 * S1 / S0**2 - f0 * S2 / S0**2
                     + 2 * f0 * S1**2 / S0**3)
        return out


def partition_of_unity(n: int) -> PartitionOfUnity:
    if n < 1:
        raise ParameterError("n must be at least 1")
    eps = 1.0 / (8 * n)
    return PartitionOfUnity(n, tuple(fc.mollify(_trapezoid(i, n, -1.0, 2.0), eps)
                                     for i in range(n + 1)))


@dataclass(frozen=True)
class PathApprox:
    """C_n(p, s, t) = sum_i G(p, s i/n) lambda_{n,i}(t)."""

    G: Callable
    n: int
    pou: PartitionOfUnity
    distance: float

    def nodes(self, p, s: float) -> np.ndarray:
        return np.array([np.asarray(self.G(p, s * (i / self.n)), dtype=float)
                         for i in range(self.n + 1)])

    def __call__(self, p, s: float, t: float) -> np.ndarray:
        return _combine(self.pou.jets(t)[:, :1], self.nodes(p, s))[0, 0]

    def path(self, p, s: float, spatial_scal: float = 0.0) -> MetricPath:
        """t -> C_n(p, s, t) with exact t-derivatives from the partition."""
        nodes = self.nodes(p, s)

        def jets(t):
            lam = self.pou.jets(min(max(t, 0.0), 1.0))
            return tuple(_combine(lam, nodes)[:, 0])

        return MetricPath(nodes.shape[1], jets, spatial_scal, f"C_{self.n}")


def _combine(lam: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    """sum_i lam_i G_i written as G_j + sum_i lam_i (G_i - G_j), j the dominant index.

    The weights sum to one, so both forms agree; the second reproduces a
    node exactly where its weight is 1 and a constant path exactly.
    lam has shape (n+1, m, T); the result has shape (m, T, d, d).
    """
    j = np.argmax(lam[:, 0], axis=0)
    base = nodes[j]
    diff = nodes[None, :] - base[:, None]
    out = np.einsum("imt,tijk->mtjk", lam, diff)
    out[0] += base
    return out


def _as_two_param(G) -> Callable:
    if isinstance(G, MetricPath):
        return lambda p, t: G.matrices(t)[0]
    return G


def path_concat_approx(G, n: int, ps: Sequence = (None,), n_s: int = 11,
                       n_t: int = 201) -> PathApprox:
    """Approximation C_n of (p, s, t) -> G(p, s t) by a partition of unity in t.

    G is a callable (p, t) -> matrix or a MetricPath (then p is ignored).
    ``distance`` is the sampled sup over p, s, t of |C_n - G(p, s t)|.
    """
    G = _as_two_param(G)
    pou = partition_of_unity(n)
    ts = np.linspace(0.0, 1.0, n_t)
    lam = pou.jets(ts)[:, :1]
    dist = 0.0
    for p in ps:
        for s in np.linspace(0.0, 1.0, n_s):
            nodes = np.array([np.asarray(G(p, s * (i / n)), dtype=float) for i in range(n + 1)])
            C = _combine(lam, nodes)[0]
            exact = np.array([np.asarray(G(p, s * t), dtype=float) for t in ts])
            dist = max(dist, float(np.max(np.abs(C - exact))))
    return PathApprox(G, n, pou, dist)


@lru_cache(maxsize=1)
def transition_profile() -> fc.SmoothFn1D:
    """f = 0 on (-inf, 1/32], f = 1 on [31/32, inf), |f'| <= 16/7, |f''| <= 256/49.

    f'' is the mollified bang-bang data +c on [1/16, 1/2], -c on [1/2, 15/16].
    """
    m = 0.4375
    c = 1.0 / m**2
    big = 1e6
    w = fc.mollify(fc.step_data(-big, big, [0.0625, 0.5, 0.9375], [0.0, c, -c, 0.0]), 0.125)
    return fc.integrate_twice(w, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class CollarTransition:
    """s -> dt^2 + C_n(s, f(t / a(s))) as a path in t."""

    approx: PathApprox
    eta: float
    spatial_scal: float
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def Lambda(self, s: float) -> float:
        key = ("L", float(s))
        if key not in self._cache:
            P = self.approx.path(None, s, self.spatial_scal)
            self._cache[key] = gajer_bound([P], self.eta)
        return self._cache[key]

    def a(self, s: float) -> float:
        L = self.Lambda(s)
        return max(math.sqrt(3 / L), 3 / L) + 1

    def step(self, s: float) -> fc.SmoothFn1D:
        """t -> f(t / a(s))."""
        a = self.a(s)
        return fc.LinearCombination((1.0 / a,), (fc.scale_warp(transition_profile(), a),))

    def __call__(self, s: float) -> MetricPath:
        P = self.approx.path(None, s, self.spatial_scal)
        return reparametrized_path(P, self.step(s))


def collar_transition(G_path: MetricPath, eta: float, n: int = 8, n_s: int = 11,
                      n_t: int = 121) -> tuple[CollarTransition, CurvatureReport]:
    """Cylinder metrics interpolating G(0) (t <= 0) and G(s) (t >= a(s)).

    The report compares scal_trace_path with min scal(G) - eta on an (s, t)
    grid covering [-1, a(s) + 1] and [b, b + 1], b = sup a(s).  checks: ``cylinder_start`` and
    ``cylinder_end`` (g' = 0 for t <= 0 and t >= b), ``step_slope`` and
    ``step_second`` (|k'|, |k''| <= Lambda(s) for k = f(t / a(s))),
    ``profile_slope`` (|f'| <= 3).
    """
    if not eta > 0:
        raise ParameterError("eta must be positive")
    approx = path_concat_approx(G_path, n)
    ct = CollarTransition(approx, float(eta), G_path.spatial_scal)
    ss = np.linspace(0.0, 1.0, n_s)
    b = max(ct.a(s) for s in ss)
    cols = {"s": [], "t": []}
    vals = []
    start = end = slope = second = math.inf
    for s in ss:
        P = ct(s)
        ts = np.concatenate([np.linspace(-1.0, ct.a(s) + 1.0, n_t), [b, b + 1.0]])
        for t in ts:
            vals.append(scal_trace_path(P, t))
            cols["s"].append(s)
            cols["t"].append(t)
        g1 = [float(np.max(np.abs(P.matrices(t)[1]))) for t in np.linspace(-1.0, 0.0, 11)]
        start = min(start, 1e-12 - max(g1))
        g1 = [float(np.max(np.abs(P.matrices(t)[1]))) for t in np.linspace(b, b + 1.0, 11)]
        end = min(end, 1e-12 - max(g1))
        k = ct.step(s).jets(np.linspace(0.0, ct.a(s), 401), 2)
        L = ct.Lambda(s)
        slope = min(slope, L - float(np.max(np.abs(k[1]))))
        second = min(second, L - float(np.max(np.abs(k[2]))))
    prof = transition_profile().jets(np.linspace(0.0, 1.0, 401), 2)
    checks = {"cylinder_start": start, "cylinder_end": end, "step_slope": slope,
              "step_second": second, "profile_slope": 3.0 - float(np.max(np.abs(prof[1])))}
    rep = make_report("collar_transition", cols, vals, G_path.spatial_scal - eta, checks)
    return ct, rep
