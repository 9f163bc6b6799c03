"""Torpedo warping functions: round near the origin, cylindrical past R."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import fncore as fc
from .curvature import CurvatureReport, make_report, sigma_fn
from .errors import ParameterError

DEFAULT_EPS = 0.05
GRID_TOL = 1e-12  # roundoff allowance for sign conditions on grids
TAIL_TOL = 1e-10


@dataclass(frozen=True)
class TorpedoSpec:
    delta: float
    eps: float
    R: float
    f: fc.SmoothFn1D

    @property
    def R_bar(self) -> float:
        return self.f.domain[1]


def build_cap_profile(eps: float = DEFAULT_EPS) -> fc.SmoothFn1D:
    """Concave u with u = id on [0, pi/2 - eps] and u = pi/2 on [pi/2 + eps, ...).

    The kink of min(t, pi/2) is mollified with radius 4 eps, i.e. a bump of
    half-width eps, so the transition occupies exactly [pi/2 - eps, pi/2 + eps].
    """
    if not 0.0 < eps < math.pi / 4:
        raise ParameterError(f"eps must lie in (0, pi/4), got {eps}")
    half = math.pi / 2
    lo = -half - 16.0 * eps
    hi = 2.0 * math.pi + eps
    pw = fc.make_piecewise([lo, half, hi], [fc.poly([0.0, 1.0]), fc.const(half)])
    return fc.mollify(pw, 4.0 * eps)


def build_torpedo(delta: float, eps: float = DEFAULT_EPS) -> TorpedoSpec:
    """h_delta(t) = delta * sin(u(t / delta)) on [0, delta * 2 pi]."""
    if not delta > 0.0:
        raise ParameterError(f"delta must be positive, got {delta}")
    u = build_cap_profile(eps)
    h1 = fc.Composed(fc.sin_fn(-4.0, 4.0), u)
    f = fc.restrict(fc.scale_warp(h1, delta), 0.0, delta * 2.0 * math.pi)
    return TorpedoSpec(float(delta), float(eps), delta * (math.pi / 2 + eps), f)


def validate_torpedo(f: fc.SmoothFn1D, delta: float, k: int, n: int = 1000) -> CurvatureReport:
    """Grid check of the four torpedo conditions; sigma values vs (k-1)(k-2)/delta^2.

    ``checks`` carries the worst margin of: 0 <= f' <= 1, f'' <= 0, and the
    existence of a constant tail f = delta (its length when present).
    """
    lo, hi = f.domain
    t = np.linspace(max(lo, 0.0), hi, n)
    j = f.jets(t, 2)
    slope = min(j[1].min(), (1.0 - j[1]).min()) + GRID_TOL
    concave = -j[2].max() + GRID_TOL
    flat = (np.abs(j[0] - delta) <= TAIL_TOL) & (np.abs(j[1]) <= TAIL_TOL) & (np.abs(j[2]) <= TAIL_TOL)
    if flat[-1] and flat[-2]:
        first = n - 1
        while first > 0 and flat[first - 1]:
            first -= 1
        tail = float(t[-1] - t[first])
    else:
        tail = -float(max(abs(j[0][-1] - delta), abs(j[1][-1]), abs(j[2][-1]), 1e-300))
    positive = j[0][1:] > 0.0
    if np.all(positive):
        sig = sigma_fn(f, k, t)
    else:
        sig = np.full_like(t, -np.inf)
        sig[1:][positive] = sigma_fn(f, k, t[1:][positive])
    checks = {"slope_in_unit_interval": slope, "concave": concave, "constant_tail": tail}
    return make_report(f"torpedo(delta={delta}, k={k})",
                       {"t": t, "f": j[0], "df": j[1], "d2f": j[2]}, sig,
                       (k - 1) * (k - 2) / delta**2, checks)
