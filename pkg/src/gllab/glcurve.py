"""Plane curves from curvature data and Gromov-Lawson curve families.

Curves are arclength-parametrized in the (y, r) half-plane with angle theta
measured from the negative r-axis, so the unit tangent is (sin theta,
-cos theta) and theta' = kappa.

The inner radius of a family is many orders of magnitude below its length,
so a family member is stored as a chain of segments, each with its own local
arclength coordinate and exact end states.  Lines, arcs and circles are
closed form; the critical bend is parametrized by its angle; short blend
windows (the smoothing of curvature jumps) are integrated numerically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, optimize

from . import fncore as fc
from .curvature import (
    CurvatureReport,
    lower_bound_from_arrays,
    make_report,
    revolution_scal_from_arrays,
)
from .errors import (
    AxisError,
    GeometryError,
    InfeasibleError,
    ParameterError,
    SolverError,
)

HALF_PI = 0.5 * math.pi
_GL = np.polynomial.legendre.leggauss(24)


# ---------------------------------------------------------------------------
# jets and generic curves


@dataclass(frozen=True)
class CurveJet:
    y: float
    r: float
    theta: float
    kappa: float

    @property
    def tangent(self) -> tuple:
        return (math.sin(self.theta), -math.cos(self.theta))


@dataclass(frozen=True)
class State:
    """Position and angle at a point of a curve."""

    y: float
    r: float
    theta: float


class PlaneCurve:
    """Arclength-parametrized curve on [0, length]."""

    length: float

    def jets(self, s) -> tuple:  # pragma: no cover
        raise NotImplementedError

    def jet(self, s: float) -> CurveJet:
        y, r, th, ka = (float(np.asarray(v).ravel()[0]) for v in self.jets(np.array([s])))
        return CurveJet(y, r, th, ka)

    def sample(self, n: int = 400) -> dict:
        s = np.linspace(0.0, self.length, n)
        y, r, th, ka = self.jets(s)
        return {"s": s, "y": y, "r": r, "theta": th, "kappa": ka}


class OdeCurve(PlaneCurve):
    """Solution of theta' = kappa(s), y' = sin theta, r' = -cos theta."""

    def __init__(self, kappa: Callable, start: CurveJet, s_max: float, sol, s_end: float):
        self.kappa_fn = kappa
        self.start = start
        self.s_max = s_max
        self.sol = sol
        self.length = s_end

    def jets(self, s):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        th, y, r = self.sol(s)
        return y, r, th, np.asarray(self.kappa_fn(s), dtype=float)


def curve_from_curvature(kappa, start: CurveJet, s_max: float, rtol: float = 1e-12,
                         stop_at_axis: bool = False) -> OdeCurve:
    """Integrate the frame equations with DOP853 from ``start`` for s in [0, s_max].

    ``kappa`` is a SmoothFn1D or any vectorized callable.  Reaching r = 0
    before s_max raises AxisError unless ``stop_at_axis`` is set, in which
    case the curve ends there.
    """
    if isinstance(kappa, fc.SmoothFn1D):
        kf = lambda s, f=kappa: f(s)
    else:
        kf = kappa

    def rhs(s, z):
        return [float(np.asarray(kf(np.array([s]))).ravel()[0]), math.sin(z[0]), -math.cos(z[0])]

    def hit_axis(s, z):
        return z[2]

    hit_axis.terminal = True
    hit_axis.direction = -1
    scale = max(abs(start.y), abs(start.r), s_max, 1e-300)
    sol = integrate.solve_ivp(rhs, (0.0, s_max), [start.theta, start.y, start.r],
                              method="DOP853", rtol=rtol, atol=1e-14 * scale,
                              dense_output=True, events=hit_axis)
    if sol.status == -1:
        raise SolverError(sol.message)
    s_end = s_max
    if sol.t_events[0].size:
        s_hit = float(sol.t_events[0][0])
        if s_hit < s_max * (1 - 1e-12) and not stop_at_axis:
            raise AxisError(f"curve reaches the axis at s={s_hit} before s_max={s_max}")
        s_end = s_hit
    return OdeCurve(kf, start, s_max, sol.sol, s_end)


# ---------------------------------------------------------------------------
# smooth steps used by blend windows


@lru_cache(maxsize=None)
def _unit_step() -> fc.SmoothFn1D:
    """Mollified Heaviside at 1 with bump half-width 1: 0 for x <= 0, 1 for x >= 2."""
    return fc.mollify(fc.step_data(-9.0, 11.0, [1.0], [0.0, 1.0]), 4.0)


_STEP_GL = np.polynomial.legendre.leggauss(64)


def _half_integral(b):
    """Integral of exp(-1/(1 - z^2)) over [0, b] for b in [-1, 1] (one GL rule)."""
    nodes, weights = _STEP_GL
    h = 0.5 * b
    z = h[:, None] * (nodes[None, :] + 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        g = np.where(np.abs(z) < 1.0, np.exp(-1.0 / (1.0 - np.minimum(z * z, 1.0))), 0.0)
    return np.sum(h[:, None] * weights[None, :] * g, axis=1)


@lru_cache(maxsize=None)
def _step_mass() -> float:
    return float(2.0 * _half_integral(np.array([1.0]))[0])


def window_step(x):
    """Smooth step on [0, 1]: the normalized bump integrated from 0 to x.

    Same function as mollifying a unit jump at 1/2 with a bump of half-width
    1/2.  Integrating from the centre keeps the quadrature away from the flat
    endpoint, where Gauss-Legendre converges slowly.
    """
    xa = np.asarray(x, dtype=float)
    flat = np.clip(np.atleast_1d(xa).ravel(), 0.0, 1.0)
    out = 0.5 + _half_integral(2.0 * flat - 1.0) / _step_mass()
    out = np.where(flat >= 1.0, 1.0, np.where(flat <= 0.0, 0.0, out))
    return float(out[0]) if xa.ndim == 0 else out.reshape(xa.shape)


# ---------------------------------------------------------------------------
# segments


class Segment:
    """Piece of a curve with local arclength sigma in [0, length]."""

    kind = "segment"
    start: State
    end: State
    length: float

    def local(self, sig) -> tuple:  # pragma: no cover
        raise NotImplementedError

    def law(self, sig: float, theta: float, r: float) -> float:
        """Curvature prescribed at local coordinate sig for the state (theta, r)."""
        raise NotImplementedError  # pragma: no cover

    def sample(self, n: int) -> tuple:
        sig = np.linspace(0.0, self.length, n)
        return (sig,) + tuple(self.local(sig))

    def sample_relative(self, n: int) -> tuple:
        """Like sample, but positions are offsets from a point fixed on the segment.

        Offsets keep full relative precision on segments much shorter than
        the absolute coordinates.
        """
        sig, y, r, th, ka = self.sample(n)
        return sig, y - self.start.y, r - self.start.r, th, ka

    def truncated(self, sig: float) -> "Segment":  # pragma: no cover
        raise NotImplementedError


class LineSeg(Segment):
    kind = "line"

    def __init__(self, start: State, length: float, end_r: float | None = None):
        self.start = start
        self.length = float(length)
        c, s = math.cos(start.theta), math.sin(start.theta)
        r_end = start.r - self.length * c if end_r is None else float(end_r)
        self.end = State(start.y + self.length * s, r_end, start.theta)

    def local(self, sig):
        sig = np.asarray(sig, dtype=float)
        th = self.start.theta
        c, s = math.cos(th), math.sin(th)
        # evaluate r from the nearer end to keep relative precision near tiny r
        r = np.where(sig <= 0.5 * self.length, self.start.r - sig * c,
                     self.end.r + (self.length - sig) * c)
        return (self.start.y + sig * s, r, np.full_like(sig, th), np.zeros_like(sig))

    def law(self, sig, theta, r):
        return 0.0

    def sample_relative(self, n):
        sig = np.linspace(0.0, self.length, n)
        th = self.start.theta
        return sig, sig * math.sin(th), -sig * math.cos(th), np.full(n, th), np.zeros(n)

    def truncated(self, sig):
        return LineSeg(self.start, sig)


class ArcSeg(Segment):
    """Constant curvature kappa (a circle, or a line when kappa = 0)."""

    kind = "arc"

    def __init__(self, start: State, kappa: float, length: float, end_theta: float | None = None):
        self.start = start
        self.kappa = float(kappa)
        self.length = float(length)
        y, r, th, _ = (float(v[0]) for v in self.local(np.array([self.length])))
        if end_theta is not None:
            th = float(end_theta)
        self.end = State(y, r, th)

    def local(self, sig):
        sig = np.asarray(sig, dtype=float)
        th0, k = self.start.theta, self.kappa
        dth = k * sig
        th = th0 + dth
        mid = th0 + 0.5 * dth
        # (sin(x/2)/ (x/2)) form avoids cancellation for small turning
        half = 0.5 * dth
        sinc = np.where(np.abs(half) > 1e-8, np.sin(half) / np.where(half == 0, 1, half), 1.0 - half**2 / 6.0)
        y = self.start.y + sig * np.sin(mid) * sinc
        r = self.start.r - sig * np.cos(mid) * sinc
        return y, r, th, np.full_like(sig, k)

    def law(self, sig, theta, r):
        return self.kappa

    def sample_relative(self, n):
        sig = np.linspace(0.0, self.length, n)
        base = ArcSeg(State(0.0, 0.0, self.start.theta), self.kappa, self.length)
        y, r, th, ka = base.local(sig)
        return sig, y, r, th, ka

    def truncated(self, sig):
        return ArcSeg(self.start, self.kappa, sig)


class CircleCapSeg(Segment):
    """Circle centred on the axis, run until it meets the axis at right angle.

    Evaluated from the axis end: theta = (L - sigma)/rho, r = rho sin(theta),
    so r and sin(theta)/r stay exact as the axis is approached.
    """

    kind = "circle"

    def __init__(self, start: State, rho: float):
        if not (rho > 0 and 0.0 < start.theta <= HALF_PI):
            raise GeometryError("cap circle needs rho > 0 and 0 < theta <= pi/2")
        self.rho = float(rho)
        self.length = self.rho * start.theta
        self.yc = start.y - self.rho * math.cos(start.theta)
        self.start = State(start.y, self.rho * math.sin(start.theta), start.theta)
        # y_end = y_start + rho (1 - cos theta), written without cancellation
        self.end = State(start.y + 2.0 * self.rho * math.sin(0.5 * start.theta) ** 2, 0.0, 0.0)

    def local(self, sig):
        sig = np.asarray(sig, dtype=float)
        th = np.clip((self.length - sig) / self.rho, 0.0, self.start.theta)
        y = self.end.y - 2.0 * self.rho * np.sin(0.5 * th) ** 2
        return y, self.rho * np.sin(th), th, np.full_like(sig, -1.0 / self.rho)

    def law(self, sig, theta, r):
        return -1.0 / self.rho

    def sample_relative(self, n):
        sig = np.linspace(0.0, self.length, n)
        th = np.clip((self.length - sig) / self.rho, 0.0, self.start.theta)
        # offsets from the axis point
        return sig, -2.0 * self.rho * np.sin(0.5 * th) ** 2, self.rho * np.sin(th), th, np.full(n, -1.0 / self.rho)

    def truncated(self, sig):
        return ArcSeg(self.start, -1.0 / self.rho, sig)


class BendSeg(Segment):
    """Critical bend kappa = sin(theta)/(a r), parametrized by theta.

    Closed form r(theta) = r_b (sin theta_b / sin theta)^a; arclength and
    height follow from ds = a r / sin theta dtheta and dy = a r dtheta.
    """

    kind = "bend"

    def __init__(self, start: State, a: float, theta_end: float):
        if not 0.0 < start.theta <= theta_end <= HALF_PI:
            raise GeometryError("bend angles must satisfy 0 < theta_b <= theta_end <= pi/2")
        self.start = start
        self.a = float(a)
        self.theta_end = float(theta_end)
        self._c = start.r * math.sin(start.theta) ** self.a
        self.length = self._int(start.theta, theta_end, "s")
        dy = self._int(start.theta, theta_end, "y")
        self.end = State(start.y + dy, self.r_of(theta_end), self.theta_end)

    def r_of(self, th):
        return self._c / np.sin(th) ** self.a

    def _integrand(self, th, which):
        r = self.r_of(th)
        return self.a * r / np.sin(th) if which == "s" else self.a * r

    @staticmethod
    def _edges(t0, t1, n=48):
        """Panels geometric in theta: the integrands scale like theta^(-a-1) near 0."""
        if t1 <= t0:
            return np.array([t0, t1])
        if t1 > 2.0 * t0:
            g = t0 * (t1 / t0) ** np.linspace(0.0, 1.0, n)
        else:
            g = np.linspace(t0, t1, max(4, n // 4))
        g[0], g[-1] = t0, t1
        return g

    def _int(self, t0, t1, which):
        if t1 <= t0:
            return 0.0
        return float(self._cumulative(self._edges(t0, t1), which)[-1])

    def _cumulative(self, th_grid, which):
        x, w = _GL
        a_, b_ = th_grid[:-1], th_grid[1:]
        h = 0.5 * (b_ - a_)
        nodes = (a_ + h)[:, None] + h[:, None] * x[None, :]
        parts = np.sum(h[:, None] * w[None, :] * self._integrand(nodes, which), axis=1)
        return np.r_[0.0, np.cumsum(parts)]

    def theta_at(self, sig: float) -> float:
        if sig <= 0.0:
            return self.start.theta
        if sig >= self.length:
            return self.theta_end
        f = lambda th: self._int(self.start.theta, th, "s") - sig
        return optimize.brentq(f, self.start.theta, self.theta_end, xtol=1e-16, rtol=1e-15)

    def local(self, sig):
        sig = np.atleast_1d(np.asarray(sig, dtype=float))
        th = np.array([self.theta_at(s) for s in sig])
        y = np.array([self.start.y + self._int(self.start.theta, t, "y") for t in th])
        r = self.r_of(th)
        return y, r, th, np.sin(th) / (self.a * r)

    def _grid(self, n):
        t0, t1 = self.start.theta, self.theta_end
        if t1 > 2.0 * t0:
            # geometric near the start, uniform towards the horizontal end
            u = np.linspace(0.0, 1.0, n)
            th = 0.5 * (t0 * (t1 / t0) ** u) + 0.5 * (t0 + (t1 - t0) * u)
        else:
            th = np.linspace(t0, t1, n)
        th[0], th[-1] = t0, t1
        return th

    def _relative(self, th):
        """Arclength and offsets from the start at the angles th (increasing)."""
        # refine each sample interval so every quadrature panel is short in log(theta)
        fine = np.unique(np.concatenate([self._edges(a_, b_, 8) for a_, b_ in zip(th[:-1], th[1:])]
                                        + [th]))
        idx = np.searchsorted(fine, th)
        sig = self._cumulative(fine, "s")[idx]
        dy = self._cumulative(fine, "y")[idx]
        # r - r_b = r_b ((sin theta_b / sin theta)^a - 1) without cancellation
        tb = self.start.theta
        dsin = 2.0 * np.cos(0.5 * (th + tb)) * np.sin(0.5 * (th - tb))
        dr = self.start.r * np.expm1(-self.a * np.log1p(dsin / math.sin(tb)))
        return sig, dy, dr

    def sample(self, n):
        th = self._grid(n)
        sig, dy, _ = self._relative(th)
        r = self.r_of(th)
        return sig, self.start.y + dy, r, th, np.sin(th) / (self.a * r)

    def sample_relative(self, n):
        th = self._grid(n)
        sig, dy, dr = self._relative(th)
        return sig, dy, dr, th, np.sin(th) / (self.a * self.r_of(th))

    def law(self, sig, theta, r):
        return math.sin(theta) / (self.a * r)

    def truncated(self, sig):
        return BendSeg(self.start, self.a, self.theta_at(sig))


class OdeSeg(Segment):
    """Curvature given by a state-dependent law, integrated in local coordinates.

    Unknowns are theta and the displacements (dy, dr) from the start point,
    so that absolute tolerances scale with the (possibly tiny) length.
    """

    kind = "ode"

    def __init__(self, start: State, length: float, law: Callable, tag: str = "window",
                 lower: Callable | None = None, upper: Callable | None = None):
        self.start = start
        self.length = float(length)
        self._law = law
        self.tag = tag
        self.lower = lower
        self.upper = upper
        if self.length <= 0.0:
            self.sol = None
            self.end = start
            return
        r0 = start.r

        def rhs(s, z):
            return [law(s, z[0], r0 + z[2]), math.sin(z[0]), -math.cos(z[0])]

        L = self.length
        sol = integrate.solve_ivp(rhs, (0.0, L), [start.theta, 0.0, 0.0], method="DOP853",
                                  rtol=1e-12, atol=[1e-15, 1e-14 * L, 1e-14 * L],
                                  dense_output=True, max_step=L / 16)
        if sol.status != 0:
            raise SolverError(f"window integration failed: {sol.message}")
        self.sol = sol.sol
        th, dy, dr = sol.y[:, -1]
        self.end = State(start.y + dy, r0 + dr, th)

    def local(self, sig):
        sig = np.atleast_1d(np.asarray(sig, dtype=float))
        if self.sol is None:
            z = np.zeros((3, sig.size))
            z[0] = self.start.theta
        else:
            z = self.sol(np.clip(sig, 0.0, self.length))
        th = z[0]
        r = self.start.r + z[2]
        ka = np.array([self._law(s, t, rr) for s, t, rr in zip(sig, th, r)])
        return self.start.y + z[1], r, th, ka

    def law(self, sig, theta, r):
        return self._law(sig, theta, r)

    def sample_relative(self, n):
        sig = np.linspace(0.0, self.length, n)
        y, r, th, ka = self.local(sig)
        if self.sol is None:
            return sig, np.zeros(n), np.zeros(n), th, ka
        z = self.sol(sig)
        return sig, z[1], z[2], th, ka

    def law_bounds(self, sig, theta, r) -> tuple:
        """Envelope of the blended laws at this state (for the min/max check)."""
        lo = self.lower(sig, theta, r) if self.lower else self._law(sig, theta, r)
        hi = self.upper(sig, theta, r) if self.upper else self._law(sig, theta, r)
        return min(lo, hi), max(lo, hi)

    def truncated(self, sig):
        return OdeSeg(self.start, sig, self._law, self.tag, self.lower, self.upper)


def blend_window(start: State, w: float, law_a: Callable, law_b: Callable, tag: str) -> OdeSeg:
    """Window of length 2w where the curvature passes from law_a to law_b.

    kappa = (1 - H) law_a + H law_b with H the mollified Heaviside centred at
    the junction (sigma = w), i.e. the convolution of the jump in the
    curvature data with the bump of half-width w.
    """
    def law(s, th, r):
        h = window_step(s / (2 * w))
        return (1.0 - h) * law_a(th, r) + h * law_b(th, r)

    lower = lambda s, th, r: law_a(th, r)
    upper = lambda s, th, r: law_b(th, r)
    return OdeSeg(start, 2 * w, law, tag, lower, upper)


class SegmentCurve(PlaneCurve):
    """Concatenation of segments; global arclength is kept for reporting only."""

    def __init__(self, segments: Sequence[Segment], r_top: float):
        self.segments = list(segments)
        self.offsets = np.r_[0.0, np.cumsum([sg.length for sg in self.segments])]
        self.length = float(self.offsets[-1])
        self.r_top = r_top

    def _locate(self, s):
        i = int(np.clip(np.searchsorted(self.offsets, s, side="right") - 1, 0, len(self.segments) - 1))
        return i, s - self.offsets[i]

    def jets(self, s):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        out = np.zeros((4, s.size))
        for n, si in enumerate(s):
            i, loc = self._locate(si)
            out[:, n] = [float(np.ravel(v)[0]) for v in self.segments[i].local(np.array([loc]))]
        return tuple(out)

    def sample(self, n: int = 400) -> dict:
        """Samples distributed over all segments (each gets at least 3 points)."""
        m = len(self.segments)
        base = max(3, n // (2 * m))
        extra = n - base * m
        weights = np.array([sg.length for sg in self.segments], dtype=float)
        weights = weights / weights.sum() if weights.sum() > 0 else np.full(m, 1.0 / m)
        alloc = base + np.floor(weights * max(extra, 0)).astype(int)
        alloc[int(np.argmax(alloc))] += n - int(alloc.sum())
        cols = {k: [] for k in ("s", "y", "r", "theta", "kappa", "segment", "local")}
        for i, (sg, na) in enumerate(zip(self.segments, alloc)):
            sig, y, r, th, ka = sg.sample(int(na))
            cols["s"].append(self.offsets[i] + sig)
            cols["local"].append(sig)
            cols["y"].append(y)
            cols["r"].append(r)
            cols["theta"].append(th)
            cols["kappa"].append(ka)
            cols["segment"].append(np.full(len(sig), i))
        return {k: np.concatenate(v) for k, v in cols.items()}

    def end_state(self) -> State:
        return self.segments[-1].end


# ---------------------------------------------------------------------------
# the bending ODE


class BendProfileFn(fc.SmoothFn1D):
    """Dense-output solution of h'' = (1 + h'^2)/(a h) with exact higher jets."""

    def __init__(self, sol, a: float, t0: float, T: float):
        self.sol = sol
        self.a = a
        self.domain = (t0, T)

    def _jets(self, t, order):
        h, h1 = self.sol(t)
        h2 = (1.0 + h1 * h1) / (self.a * h)
        h3 = (2.0 * h1 * h2) / (self.a * h) - (1.0 + h1 * h1) * h1 / (self.a * h * h)
        return np.array([h, h1, h2, h3])[: order + 1]

    def to_json(self):
        raise NotImplementedError("ODE solutions are not serializable")


def conserved_quantity(h, h1, a: float):
    """h^(1/a) / sqrt(1 + h'^2), constant along solutions of the bending ODE."""
    return np.asarray(h) ** (1.0 / a) / np.sqrt(1.0 + np.asarray(h1) ** 2)


def bend_profile_solve(a: float, f0: float, slope0: float, t0: float = 0.0,
                       tol: float = 1e-10, max_steps: int = 100000):
    """Solve the bending ODE from (f0, slope0) until h' = 0.

    Steps DOP853 manually; when h' changes sign inside an accepted step the
    root is located by bisection on the step's dense output.
    Returns (BendProfileFn on [t0, T], T).
    """
    if not (a > 0 and f0 > 0 and slope0 < 0):
        raise ParameterError("need a > 0, f0 > 0 and slope0 < 0")

    def rhs(t, z):
        return [z[1], (1.0 + z[1] ** 2) / (a * z[0])]

    t_scale = abs(slope0) * a * f0 + f0
    solver = integrate.DOP853(rhs, t0, [f0, slope0], t_bound=t0 + 1e6 * t_scale,
                              rtol=1e-13, atol=[1e-15 * f0, 1e-15 * (1 + abs(slope0))])
    pieces = []
    for _ in range(max_steps):
        t_prev, z_prev = solver.t, solver.y.copy()
        msg = solver.step()
        if solver.status == "failed":
            raise SolverError(f"bending ODE failed: {msg}")
        dense = solver.dense_output()
        if solver.y[1] >= 0.0:
            lo, hi = t_prev, solver.t
            while hi - lo > tol * 1e-4 * max(1.0, abs(hi)):
                mid = 0.5 * (lo + hi)
                if dense(mid)[1] < 0.0:
                    lo = mid
                else:
                    hi = mid
                if mid in (lo, hi) and hi - lo <= 4 * np.spacing(hi):
                    break
            T = 0.5 * (lo + hi)
            if abs(hi - lo) > tol * max(1.0, abs(T)):
                raise SolverError("event bisection did not converge")
            pieces.append((t_prev, T, dense))
            break
        pieces.append((t_prev, solver.t, dense))
        if solver.status == "finished":
            raise SolverError("no turning point found")
    else:
        raise SolverError("step limit reached without a turning point")

    starts = np.array([p[0] for p in pieces])

    def sol(t):
        t = np.atleast_1d(t)
        idx = np.clip(np.searchsorted(starts, t, side="right") - 1, 0, len(pieces) - 1)
        out = np.zeros((2, t.size))
        for i in np.unique(idx):
            sel = idx == i
            out[:, sel] = pieces[i][2](t[sel])
        return out

    return BendProfileFn(sol, a, t0, T), T


# ---------------------------------------------------------------------------
# parameters


def variant_feasibility(k: int, a: float) -> float:
    """-2/a + k - 2, which must be positive for the inner bend estimate."""
    return -2.0 / a + k - 2.0


@dataclass(frozen=True)
class GLParams:
    k: int
    eta: float
    eps0: float
    ell: float
    r0: float
    rho: float
    C: float
    base_scal: float
    a: float
    r1: float
    r2: float
    r3: float
    r4: float
    r5: float
    theta0: float
    q: float
    step_delta: float
    omega: float
    moll_u: float

    def ordering_ok(self) -> bool:
        return (self.a > 2.0 / (self.k - 2)
                and self.r5 <= self.r4 <= min(self.eps0, self.r3) < self.r3 < self.r2 <= self.r1 <= self.r0 < self.rho
                and self.theta0 == self.q * self.step_delta and self.theta0 < HALF_PI)

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def select_parameters(k: int, eta: float, eps0: float, ell: float, r0: float,
                      C: float = 0.0, base_scal: float = 0.0,
                      force_a: float | None = None, r1: float | None = None) -> GLParams:
    """Constants for the curve construction, each satisfying its inequality."""
    if k < 3:
        raise ParameterError("need k >= 3")
    for name, v in (("eta", eta), ("eps0", eps0), ("ell", ell), ("r0", r0)):
        if not v > 0:
            raise ParameterError(f"{name} must be positive")
    if C < 0:
        raise ParameterError("C must be nonnegative")
    a = 2.0 / (k - 2) + 1.0 if force_a is None else float(force_a)
    if not a > 0:
        raise ParameterError("a must be positive")
    feas = variant_feasibility(k, a)
    if feas <= 0.0:
        raise InfeasibleError("-2/a+k-2 > 0", f"k={k}, a={a}: value {feas}")
    rho = 2.0 * r0
    r1 = r0 if r1 is None else float(r1)
    if not 0.0 < r1 <= r0:
        raise ParameterError("r1 must lie in (0, r0]")
    r2 = min(r1, (k - 1) / C) if C > 0 else r1 / 2.0
    r3 = r2 / 2.0
    delta = (r2 - r3) / 4.0
    q = eta / (2.0 * (2.0 * (k - 1) / r3 + C))
    theta0 = q * delta
    if not theta0 < HALF_PI:
        raise InfeasibleError("theta0 = q*delta < pi/2")
    cands = [eps0, r3 / 2.0]
    if C > 0:
        cands.append((k - 1) * math.sin(theta0) ** 2 * feas / (C * (1.0 + 1.0 / a)))
    r4 = min(cands)
    r5 = r4 * math.sin(theta0) ** a  # = C_cons^a with C_cons = r4^(1/a) sin(theta0)
    if not r5 > 0.0:
        raise InfeasibleError("r5 > 0", "inner width underflows")
    omega = min(r5 / 2.0, delta, ell) / 8.0
    return GLParams(k, eta, eps0, ell, r0, rho, C, base_scal, a, r1, r2, r3, r4, r5,
                    theta0, q, delta, omega, omega / 2.0)


# ---------------------------------------------------------------------------
# family construction


@dataclass
class _Base:
    """Smoothed curve up to the end of the bend, shared by all lambda."""

    segments: list
    offsets: np.ndarray
    s5: float          # arclength where the bend window ends (theta = pi/2)
    r_inf: float
    w: float


def _build_base(p: GLParams, u: float) -> _Base:
    w = u / 4.0
    a, q, d = p.a, p.q, p.step_delta
    zero = lambda th, r: 0.0
    arc = lambda th, r: q
    bend = lambda th, r: math.sin(th) / (a * r)
    segs: list = []
    st = State(0.0, p.r2, 0.0)
    segs.append(LineSeg(st, d - w))
    segs.append(blend_window(segs[-1].end, w, zero, arc, "arc-start"))
    segs.append(ArcSeg(segs[-1].end, q, d - 2 * w))
    segs.append(blend_window(segs[-1].end, w, arc, zero, "arc-end"))
    st = segs[-1].end
    # straight line down to the junction at height r4 (window centred there)
    L = (st.r - p.r4) / math.cos(st.theta) - w
    if L <= 0:
        raise GeometryError("no room for the sloped segment")
    segs.append(LineSeg(st, L, end_r=p.r4 + w * math.cos(st.theta)))
    segs.append(blend_window(segs[-1].end, w, zero, bend, "bend-start"))
    st_b = segs[-1].end

    # bend up to the point where the closing window ends exactly at pi/2
    def closing(theta_c):
        r_c = st_b.r * (math.sin(st_b.theta) / math.sin(theta_c)) ** a
        win = blend_window(State(0.0, r_c, theta_c), w, bend, zero, "bend-end")
        return win.end.theta - HALF_PI

    hi = HALF_PI
    if closing(hi) <= 0:
        raise GeometryError("closing window cannot reach pi/2")
    lo = max(st_b.theta, HALF_PI - 0.05)
    while closing(lo) > 0:
        if lo <= st_b.theta:
            raise GeometryError("bend too short for the closing window")
        lo = max(st_b.theta, HALF_PI - 2 * (HALF_PI - lo))
    theta_c = optimize.brentq(closing, lo, hi, xtol=1e-15, rtol=1e-15)
    bend_seg = BendSeg(st_b, a, theta_c)
    segs.append(bend_seg)
    win = blend_window(bend_seg.end, w, bend, zero, "bend-end")
    segs.append(win)
    offsets = np.r_[0.0, np.cumsum([sg.length for sg in segs])]
    return _Base(segs, offsets, float(offsets[-1]), win.end.r, w)


def _cap(start: State, omega: float) -> list:
    """Straight-to-circle blend over omega, then a circle centred on the axis."""
    th_e, r_s = start.theta, start.r
    if th_e <= 0.0:
        return [LineSeg(start, r_s, end_r=0.0)]

    def ramp(rho_c):
        law = lambda s, th, r: -window_step(s / omega) / rho_c
        return OdeSeg(start, omega, law, "cap-ramp",
                      lambda s, th, r: 0.0, lambda s, th, r: -1.0 / rho_c)

    def mismatch(rho_c):
        e = ramp(rho_c).end
        return e.r - rho_c * math.sin(e.theta)

    rho0 = r_s / math.sin(th_e)
    rho_min = 0.5 * omega / th_e * 1.0000001
    lo, hi = max(rho0 * 0.5, rho_min), rho0 * 2.0
    for _ in range(60):
        if mismatch(lo) > 0:
            break
        lo = max(rho_min, 0.5 * lo)
    for _ in range(60):
        if mismatch(hi) < 0:
            break
        hi *= 2.0
    if not (mismatch(lo) > 0 > mismatch(hi)):
        raise GeometryError("no axis-centred circle fits the end of the curve")
    rho_c = optimize.brentq(mismatch, lo, hi, xtol=1e-16 * rho0, rtol=1e-15)
    rp = ramp(rho_c)
    circle = CircleCapSeg(rp.end, rho_c)
    return [rp, circle]


def _truncation_window(base: _Base, s_t: float) -> list:
    """Segments of the base up to s_t - w, then a window that switches kappa off."""
    w = base.w
    segs = base.segments
    off = base.offsets
    s_a = s_t - w
    out = []
    if s_a <= 0.0:
        start = State(0.0, base.segments[0].start.r - s_a, 0.0)  # extended vertical line
        i0, loc0 = 0, s_a
    else:
        i0 = int(np.clip(np.searchsorted(off, s_a, side="right") - 1, 0, len(segs) - 1))
        out.extend(segs[:i0])
        loc0 = s_a - off[i0]
        part = segs[i0].truncated(loc0)
        if part.length > 0:
            out.append(part)
        start = part.end if part.length > 0 else segs[i0].start

    def K(s_glob, th, r):
        if s_glob < 0.0 or s_glob >= base.s5:
            return 0.0
        i = int(np.clip(np.searchsorted(off, s_glob, side="right") - 1, 0, len(segs) - 1))
        return segs[i].law(s_glob - off[i], th, r)

    law = lambda s, th, r: (1.0 - window_step(s / (2 * w))) * K(s_a + s, th, r)
    lower = lambda s, th, r: 0.0
    upper = lambda s, th, r: K(s_a + s, th, r)
    out.append(OdeSeg(start, 2 * w, law, "truncate", lower, upper))
    return out


def build_gl_curve(p: GLParams, lam: float, base: _Base, length_h: float | None = None) -> SegmentCurve:
    """Family member for one lambda in [0, 1]."""
    if not 0.0 <= lam <= 1.0:
        raise ParameterError("lambda must lie in [0, 1]")
    om = p.omega
    r_inf = base.r_inf
    if lam >= 0.5:
        segs = list(base.segments)
        Lh = om + (2 * lam - 1) * (2 * p.ell - om) if length_h is None else length_h
        e = segs[-1].end
        horiz = LineSeg(State(e.y, r_inf, HALF_PI), Lh, end_r=r_inf)
        segs.append(horiz)
        segs.extend(_cap(horiz.end, om))
        return SegmentCurve(segs, p.r2)
    s_t = 2 * lam * base.s5
    first_kink = base.offsets[1]  # start of the first blend window
    if s_t + base.w <= first_kink:
        return SegmentCurve([LineSeg(State(0.0, p.r2, 0.0), p.r2, end_r=0.0)], p.r2)
    segs = _truncation_window(base, s_t)
    e = segs[-1].end
    if e.theta > HALF_PI:
        raise GeometryError("truncated curve turned past the horizontal")
    if e.theta == 0.0:
        segs.append(LineSeg(e, e.r, end_r=0.0))
        return SegmentCurve(segs, p.r2)
    drop = max(0.0, e.r - r_inf)
    L1 = drop / math.cos(e.theta) if e.theta < HALF_PI else 0.0
    line = LineSeg(e, L1 + om, end_r=e.r - (L1 + om) * math.cos(e.theta) if drop == 0.0 else
                   r_inf - om * math.cos(e.theta))
    segs.append(line)
    segs.extend(_cap(line.end, om))
    return SegmentCurve(segs, p.r2)


@dataclass
class GLFamily:
    params: GLParams
    lambdas: np.ndarray
    curves: list
    r_inf: float
    length_achieved: float
    u: float

    def reparametrize(self, lam_index: int, sigma) -> tuple:
        """Gamma_lambda(sigma): reversed arclength from the axis, glued to (0, sigma).

        tau = sigma + (L - r2) H(sigma) with H a smooth step from r0/2 to r0, so
        tau = sigma near the axis and Gamma(sigma) = (0, sigma) for sigma >= r0.
        """
        c = self.curves[lam_index]
        p = self.params
        L = c.length
        sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
        H = window_step((sigma - p.r0 / 2) / (p.r0 / 2))
        tau = sigma + (L - p.r2) * H
        s = L - tau
        y = np.zeros_like(sigma)
        r = np.zeros_like(sigma)
        up = s <= 0.0
        r[up] = p.r2 - s[up]
        if np.any(~up):
            yy, rr, _, _ = c.jets(s[~up])
            y[~up], r[~up] = yy, rr
        return y, r


def build_gl_family(params: GLParams, lambda_grid: Sequence[float], u: float | None = None) -> GLFamily:
    """Curves for every lambda on the grid, smoothed with radius u (default omega/2)."""
    if not params.ordering_ok():
        raise InfeasibleError("parameter ordering", "GLParams violate the selection inequalities")
    u = params.moll_u if u is None else float(u)
    if not 0 < u <= params.omega:
        raise ParameterError("smoothing radius must lie in (0, omega]")
    base = _build_base(params, u)
    lams = np.asarray(lambda_grid, dtype=float)
    curves = [build_gl_curve(params, float(l), base) for l in lams]
    L1 = build_gl_curve(params, 1.0, base)
    horiz = [sg for sg in L1.segments if sg.kind == "line" and sg.start.theta == HALF_PI]
    return GLFamily(replace(params, moll_u=u), lams, curves, base.r_inf,
                    horiz[0].length if horiz else 0.0, u)


def curve_samples(c: SegmentCurve, n: int) -> dict:
    return c.sample(n)


def verify_gl_family(fam: GLFamily, k: int, C: float = 0.0, base_scal: float = 0.0,
                     n_s: int = 400, use_estimate: bool | None = None) -> CurvatureReport:
    """Curvature over the (lambda, s) grid against base_scal - eta.

    C = 0 uses the exact tube curvature; C > 0 uses the certified lower bound.
    Auxiliary checks: curvature of every blend window within the envelope of
    the two laws it joins, and theta within [0, pi/2].
    """
    if use_estimate is None:
        use_estimate = C > 0
    rows = {k_: [] for k_ in ("lambda", "s", "y", "r", "theta", "kappa")}
    vals = []
    env = 1.0  # margins are capped at 1 so an all-clear check does not dominate
    ang = 1.0
    for lam, c in zip(fam.lambdas, fam.curves):
        smp = c.sample(n_s)
        r = smp["r"].copy()
        on_axis = r <= 0.0
        th, ka = smp["theta"], smp["kappa"]
        v = np.empty_like(r)
        rr = np.where(on_axis, 1.0, r)
        if use_estimate:
            v[:] = lower_bound_from_arrays(k, rr, th, ka, C, base_scal)
        else:
            v[:] = revolution_scal_from_arrays(k, rr, th, ka, base_scal)
        if np.any(on_axis):
            # axis point of a circular cap: smooth closing, value k(k-1)/rho^2 for circles
            for idx in np.nonzero(on_axis)[0]:
                v[idx] = base_scal + k * (k - 1) * ka[idx] ** 2 if ka[idx] != 0 else base_scal
        vals.append(v)
        for key in ("s", "y", "r", "theta", "kappa"):
            rows[key].append(smp[key])
        rows["lambda"].append(np.full(r.size, lam))
        ang = min(ang, th.min() + 1e-12, HALF_PI - th.max() + 1e-12)
        for i, sg in enumerate(c.segments):
            if isinstance(sg, OdeSeg):
                sel = smp["segment"] == i
                for s_, t_, r_, k_ in zip(smp["local"][sel], th[sel], r[sel], ka[sel]):
                    lo, hi = sg.law_bounds(s_, t_, r_)
                    tol = 1e-9 * max(1.0, abs(lo), abs(hi))
                    env = min(env, k_ - lo + tol, hi - k_ + tol)
    checks = {"window_curvature_envelope": env, "angle_range": ang}
    return make_report(f"gl_family(k={k})", {key: np.concatenate(v) for key, v in rows.items()},
                       np.concatenate(vals), base_scal - fam.params.eta, checks)


def build_verified_family(params: GLParams, lambda_grid: Sequence[float], k: int | None = None,
                          n_s: int = 400, retries: int = 6):
    """Build and verify, halving the smoothing radius on failure (at most ``retries`` times)."""
    k = params.k if k is None else k
    u = params.moll_u
    for _ in range(retries + 1):
        fam = build_gl_family(params, lambda_grid, u)
        rep = verify_gl_family(fam, k, params.C, params.base_scal, n_s)
        if rep.passed:
            return fam, rep
        u *= 0.5
    return fam, rep
