"""Scalar curvature of warped metrics, metric paths and bent tubes.

Also hosts an independent finite-difference Riemann-tensor oracle used to
cross-check the closed forms.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import fncore as fc
from .errors import (
    AxisError,
    DomainError,
    OracleError,
    ParameterError,
    SingularMetricError,
    WarpingError,
)

T_SWITCH_REL = 1e-3
_GL16 = np.polynomial.legendre.leggauss(16)


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class CurvatureReport:
    """Sampled values against a lower bound.

    ``samples`` maps parameter names to equally long columns.  ``checks``
    holds worst margins of auxiliary conditions (e.g. f' <= 1); they enter
    the verdict through ``margin``.  Without checks, margin = min_value - bound.
    """

    name: str
    samples: dict
    values: np.ndarray
    bound: float
    checks: dict = field(default_factory=dict)

    @property
    def min_value(self) -> float:
        v = np.asarray(self.values, dtype=float)
        if v.size == 0:
            return float("inf")
        return float(np.nan) if np.any(np.isnan(v)) else float(v.min())

    @property
    def margin(self) -> float:
        m = self.min_value - self.bound
        for c in self.checks.values():
            m = min(m, float(c))
        return float(m)

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.margin) or self.margin == np.inf) and self.margin >= 0.0

    def argmin(self) -> dict:
        i = int(np.nanargmin(self.values))
        return {k: float(np.asarray(v)[i]) for k, v in self.samples.items()}

    def to_json(self) -> dict:
        cols = {k: np.asarray(v, dtype=float).tolist() for k, v in self.samples.items()}
        vals = np.asarray(self.values, dtype=float).tolist()
        samples = []
        for i, v in enumerate(vals):
            row = {k: c[i] for k, c in cols.items()}
            row["value"] = v
            samples.append(row)
        out = {"name": self.name, "samples": samples, "bound": float(self.bound),
               "min_value": self.min_value, "margin": self.margin, "pass": self.passed}
        if self.checks:
            out["checks"] = {k: float(v) for k, v in self.checks.items()}
        return out

    @staticmethod
    def from_json(d: dict) -> "CurvatureReport":
        rows = d["samples"]
        keys = [k for k in (rows[0] if rows else {}) if k != "value"]
        samples = {k: np.array([r[k] for r in rows]) for k in keys}
        return CurvatureReport(d.get("name", ""), samples,
                               np.array([r["value"] for r in rows]), d["bound"],
                               dict(d.get("checks", {})))


def make_report(name: str, samples: dict, values, bound: float, checks: dict | None = None) -> CurvatureReport:
    cols = {k: np.ravel(np.asarray(v, dtype=float)) for k, v in samples.items()}
    vals = np.ravel(np.asarray(values, dtype=float))
    for k, c in cols.items():
        if c.size != vals.size:
            raise ParameterError(f"sample column {k!r} has wrong length")
    return CurvatureReport(name, cols, vals, float(bound), dict(checks or {}))


# ---------------------------------------------------------------------------
# warped metrics


@dataclass(frozen=True)
class WarpSpec:
    """Metric dt^2 + f(t)^2 dxi^2 on a k-disk, plus an ambient scalar offset A."""

    k: int
    f: fc.SmoothFn1D
    A: float = 0.0

    def __post_init__(self):
        if self.k < 2:
            raise ParameterError("k must be at least 2")
        lo, hi = self.f.domain
        if lo > 1e-12:
            raise DomainError("warping function must be defined from t = 0")
        if lo < 0.0:
            object.__setattr__(self, "f", fc.restrict(self.f, 0.0, hi))
        j = self.f.jets(0.0, 1)[:, 0]
        if abs(j[0]) > 1e-10 or abs(j[1] - 1.0) > 1e-10:
            raise WarpingError(f"need f(0)=0 and f'(0)=1, got {j[0]}, {j[1]}")
        t = np.linspace(0.0, hi, 201)[1:]
        if np.any(self.f(t) <= 0.0):
            raise WarpingError("warping function must be positive on (0, R]")

    @property
    def R_bar(self) -> float:
        return self.f.domain[1]

    @property
    def B(self) -> float:
        return max(0.0, -self.A)


def sigma_from_jets(k: int, f0, f1, f2) -> np.ndarray:
    """(k-1)((k-2)(1-f'^2)/f^2 - 2f''/f) from jet arrays; no positivity check."""
    f0 = np.asarray(f0, dtype=float)
    f1 = np.asarray(f1, dtype=float)
    one_minus = (1.0 - f1) * (1.0 + f1)
    return (k - 1) * ((k - 2) * one_minus / f0**2 - 2.0 * np.asarray(f2) / f0)


def _sigma_small(f: fc.SmoothFn1D, k: int, t: np.ndarray) -> np.ndarray:
    """sigma near t = 0 from integral Taylor remainders of f'''.

    With f(0)=0, f'(0)=1:
      f(t)/t        = int_0^1 f'(ts) ds
      (f'(t)-1)/t^2 = f''(0)/t + int_0^1 (1-s) f'''(ts) ds
      f''(t)/t      = f''(0)/t + int_0^1 f'''(ts) ds
    which is free of 0/0 cancellation; at t = 0 it returns the limit
    -k(k-1) f'''(0) when f''(0) = 0.
    """
    x, w = _GL16
    s = 0.5 * (x + 1.0)
    w = 0.5 * w
    f2_0 = float(f.jets(0.0, 2)[2, 0])
    if abs(f2_0) <= 1e-9 * (1.0 + 1.0 / f.domain[1]):
        f2_0 = 0.0  # odd warping functions: treat roundoff as zero
    ts = np.outer(t, s)
    jj = f.jets(ts.ravel(), 3)
    d1 = jj[1].reshape(ts.shape)
    d3 = jj[3].reshape(ts.shape)
    f_over_t = d1 @ w
    p_over_t2 = d3 @ (w * (1.0 - s))
    fpp_over_t = d3 @ w
    if f2_0 != 0.0:
        if np.any(t == 0.0):
            raise WarpingError("f''(0) != 0: curvature is unbounded at the origin")
        p_over_t2 = p_over_t2 + f2_0 / t
        fpp_over_t = fpp_over_t + f2_0 / t
    P = p_over_t2 * t * t  # f'(t) - 1
    one_minus_over_t2 = -p_over_t2 * (2.0 + P)
    return (k - 1) * ((k - 2) * one_minus_over_t2 / f_over_t**2 - 2.0 * fpp_over_t / f_over_t)


def sigma_fn(f: fc.SmoothFn1D, k: int, t, t_switch: float | None = None,
             check_positive: bool = True) -> np.ndarray:
    """sigma(f)(t) for a warping function with f(0)=0, f'(0)=1 (vectorized).

    Points at or below ``t_switch`` (default 1e-3 * right end of the
    domain) use the cancellation-free small-t branch.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if t_switch is None:
        t_switch = T_SWITCH_REL * f.domain[1]
    out = np.empty_like(t)
    small = t <= t_switch
    big = ~small
    if np.any(big):
        j = f.jets(t[big], 2)
        if check_positive and np.any(j[0] <= 0.0):
            bad = t[big][j[0] <= 0.0][0]
            raise WarpingError(f"warping function not positive at t={bad}")
        out[big] = sigma_from_jets(k, j[0], j[1], j[2])
    if np.any(small):
        if np.any(t[small] < 0.0):
            raise DomainError("t must be nonnegative")
        out[small] = _sigma_small(f, k, t[small])
    return out


def sigma_warp(w: WarpSpec, t):
    """Scalar curvature sigma(f)(t) of the warped metric (without the offset A)."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0.0) or np.any(t_arr > w.R_bar * (1 + 1e-12)):
        raise DomainError(f"t outside [0, {w.R_bar}]")
    v = sigma_fn(w.f, w.k, t_arr, T_SWITCH_REL * w.R_bar)
    return float(v[0]) if t_arr.ndim == 0 else v


# ---------------------------------------------------------------------------
# paths of metrics (trace construction)


@dataclass(frozen=True)
class MetricPath:
    """t -> g(t) on a d-dimensional fiber with constant scalar curvature.

    ``jets(t)`` returns (g, g', g'') as d x d arrays.
    """

    d: int
    jets: Callable
    spatial_scal: float = 0.0
    label: str = ""

    def matrices(self, t: float):
        g, g1, g2 = (np.asarray(m, dtype=float) for m in self.jets(float(t)))
        for m in (g, g1, g2):
            if m.shape != (self.d, self.d):
                raise ParameterError(f"expected {self.d}x{self.d} matrices")
        return g, g1, g2


def constant_path(G0, spatial_scal: float = 0.0) -> MetricPath:
    G0 = np.asarray(G0, dtype=float)
    z = np.zeros_like(G0)
    return MetricPath(G0.shape[0], lambda t: (G0, z, z), spatial_scal, "constant")


def linear_path(G0, G1, spatial_scal: float = 0.0) -> MetricPath:
    G0 = np.asarray(G0, dtype=float)
    G1 = np.asarray(G1, dtype=float)
    z = np.zeros_like(G0)
    return MetricPath(G0.shape[0], lambda t: ((1 - t) * G0 + t * G1, G1 - G0, z),
                      spatial_scal, "linear")


def conformal_path(phi: fc.SmoothFn1D, d: int) -> MetricPath:
    """g(t) = exp(2 phi(t)) I_d on a flat torus."""

    def jets(t):
        p0, p1, p2 = phi.jets(t, 2)[:, 0]
        e = np.exp(2 * p0)
        eye = np.eye(d)
        return e * eye, 2 * p1 * e * eye, (2 * p2 + 4 * p1 * p1) * e * eye

    return MetricPath(d, jets, 0.0, "conformal")


def diagonal_path(factors: Sequence[fc.SmoothFn1D]) -> MetricPath:
    """g(t) = diag(a_1(t)^2, ..., a_d(t)^2) on a flat torus."""

    def jets(t):
        a = np.array([f.jets(t, 2)[:, 0] for f in factors])
        return (np.diag(a[:, 0] ** 2), np.diag(2 * a[:, 0] * a[:, 1]),
                np.diag(2 * a[:, 1] ** 2 + 2 * a[:, 0] * a[:, 2]))

    return MetricPath(len(factors), jets, 0.0, "diagonal")


def reparametrized_path(P: MetricPath, f: fc.SmoothFn1D) -> MetricPath:
    """t -> g(f(t)) with the chain rule applied to the t-derivatives."""

    def jets(t):
        f0, f1, f2 = f.jets(t, 2)[:, 0]
        g, g1, g2 = P.matrices(f0)
        return g, f1 * g1, f2 * g1 + f1 * f1 * g2

    return MetricPath(P.d, jets, P.spatial_scal, P.label + "~")


def _inv(g: np.ndarray) -> np.ndarray:
    try:
        c = np.linalg.cond(g)
    except np.linalg.LinAlgError as exc:  # pragma: no cover
        raise SingularMetricError(str(exc)) from exc
    if not np.isfinite(c) or c > 1e13:
        raise SingularMetricError(f"metric is singular (condition {c:.3g})")
    return np.linalg.inv(g)


def trace_terms(P: MetricPath, t: float) -> tuple:
    """(tr(g^-1 g'), (3/4)tr((g^-1 g')^2) - tr(g^-1 g'') - (1/4)tr(g^-1 g')^2)."""
    g, g1, g2 = P.matrices(t)
    gi = _inv(g)
    A = gi @ g1
    trA = np.trace(A)
    return trA, 0.75 * np.trace(A @ A) - np.trace(gi @ g2) - 0.25 * trA * trA


def scal_trace_path(P: MetricPath, t: float) -> float:
    """Scalar curvature of dt^2 + g(t) at parameter t."""
    g, g1, g2 = P.matrices(t)
    if not np.allclose(g, g.T, rtol=0, atol=0):
        raise ParameterError("metric matrix is not symmetric")
    gi = _inv(g)
    t1 = np.einsum("ik,jl,ij,kl->", gi, gi, g1, g1)
    t2 = np.einsum("kl,kl->", gi, g2)
    t3 = np.einsum("ik,jl,ik,jl->", gi, gi, g1, g1)
    return float(P.spatial_scal + 0.75 * t1 - t2 - 0.25 * t3)


def path_sampler(P: MetricPath) -> Callable:
    """Coordinates (t, x_1..x_d) -> block metric diag(1, g(t)) for the oracle."""

    def sampler(x):
        g = P.matrices(x[0])[0]
        h = np.eye(P.d + 1)
        h[1:, 1:] = g
        return h

    return sampler


# ---------------------------------------------------------------------------
# finite-difference oracle


def _christoffel(metric, x, steps):
    D = len(x)
    h = np.asarray(metric(x), dtype=float)
    dh = np.zeros((D, D, D))  # dh[l, i, j] = d_l h_ij
    for l in range(D):
        e = np.zeros(D)
        e[l] = steps[l]
        dh[l] = (-np.asarray(metric(x + 2 * e)) + 8 * np.asarray(metric(x + e))
                 - 8 * np.asarray(metric(x - e)) + np.asarray(metric(x - 2 * e))) / (12 * steps[l])
    hi = _inv(h)
    # Gamma^k_ij = 1/2 h^kl (d_j h_il + d_i h_jl - d_l h_ij)
    T = np.einsum("jil->ijl", dh) + dh - np.einsum("lij->ijl", dh)
    return 0.5 * np.einsum("kl,ijl->kij", hi, T), hi


def _fd_scal_once(metric, x, steps):
    D = len(x)
    G, hi = _christoffel(metric, x, steps)
    dG = np.zeros((D, D, D, D))  # dG[m, k, i, j] = d_m Gamma^k_ij
    for m in range(D):
        e = np.zeros(D)
        e[m] = steps[m]
        dG[m] = (-_christoffel(metric, x + 2 * e, steps)[0] + 8 * _christoffel(metric, x + e, steps)[0]
                 - 8 * _christoffel(metric, x - e, steps)[0] + _christoffel(metric, x - 2 * e, steps)[0]) / (12 * steps[m])
    # R^k_lij = d_i G^k_jl - d_j G^k_il + G^k_im G^m_jl - G^k_jm G^m_il
    R = (np.einsum("ikjl->klij", dG) - np.einsum("jkil->klij", dG)
         + np.einsum("kim,mjl->klij", G, G) - np.einsum("kjm,mil->klij", G, G))
    ric = np.einsum("kjkl->jl", R)
    return float(np.einsum("jl,jl->", hi, ric))


def fd_oracle_scal(metric_sampler: Callable, point, d_total: int, rel_step: float = 1e-3) -> float:
    """Scalar curvature by finite differences of the metric (Richardson-refined).

    Christoffel symbols and their derivatives use 4th-order central stencils
    with steps h_i = rel_step (1 + |x_i|); one Richardson level combines the
    results for h and h/2.
    """
    x = np.asarray(point, dtype=float)
    if x.shape != (d_total,):
        raise ParameterError(f"point must have {d_total} coordinates")
    if d_total > 4:
        raise ParameterError("oracle supports at most 4 dimensions")
    steps = rel_step * (1.0 + np.abs(x))
    if np.any(steps < 1e-12):
        raise OracleError("finite-difference step underflow")
    try:
        s1 = _fd_scal_once(metric_sampler, x, steps)
        s2 = _fd_scal_once(metric_sampler, x, steps / 2)
    except SingularMetricError as exc:
        raise OracleError(f"singular metric near the point: {exc}") from exc
    val = (16.0 * s2 - s1) / 15.0
    if not np.isfinite(val):
        raise OracleError("non-finite oracle value")
    return val


def warped_sampler(f: fc.SmoothFn1D, k: int) -> Callable:
    """dt^2 + f(t)^2 g_round(S^{k-1}) in coordinates (t, angles) for k <= 3."""
    if k == 2:
        return lambda x: np.diag([1.0, float(f(x[0])) ** 2])
    if k == 3:
        return lambda x: np.diag([1.0, float(f(x[0])) ** 2, float(f(x[0])) ** 2 * np.sin(x[1]) ** 2])
    raise ParameterError("warped oracle sampler implemented for k = 2, 3")


# ---------------------------------------------------------------------------
# hypersurfaces of revolution in the flat model


@dataclass(frozen=True)
class PrincipalCurvatures:
    lambdas: tuple

    def __len__(self):
        return len(self.lambdas)


def principal_curvatures_model(cj, k: int, d_total: int) -> PrincipalCurvatures:
    """kappa, then k-1 copies of -sin(theta)/r, then zeros up to d_total."""
    if d_total < k:
        raise ParameterError("d_total must be at least k")
    if not cj.r > 0.0:
        raise AxisError(f"radius must be positive, got {cj.r}")
    lam = -np.sin(cj.theta) / cj.r
    return PrincipalCurvatures((float(cj.kappa),) + (float(lam),) * (k - 1) + (0.0,) * (d_total - k))


def revolution_scal_from_arrays(k: int, r, theta, kappa, A: float = 0.0) -> np.ndarray:
    """A + 2 sum_{i<j} lambda_i lambda_j for the model principal curvatures.

    Pairs (1, j) contribute kappa * (-sin/r) each, the k-1 equal entries
    contribute C(k-1, 2) products (sin/r)^2; zeros contribute nothing.
    """
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0.0):
        raise AxisError("radius must be positive")
    lam = -np.sin(theta) / r
    lambdas = [np.asarray(kappa, dtype=float)] + [lam] * (k - 1)
    total = np.zeros_like(r)
    for i, j in itertools.combinations(range(k), 2):
        total = total + lambdas[i] * lambdas[j]
    return A + 2.0 * total


def scal_revolution(curve, k: int, s: float, A: float = 0.0) -> float:
    """Scalar curvature of the tube bent along ``curve`` at arclength s."""
    cj = curve.jet(s)
    if not cj.r > 0.0:
        raise AxisError(f"curve touches the axis at s={s}")
    lam = principal_curvatures_model(cj, k, k).lambdas
    total = sum(lam[i] * lam[j] for i, j in itertools.combinations(range(k), 2))
    return float(A + 2.0 * total)


def lower_bound_estimate(cj, k: int, C: float, base_scal: float) -> float:
    """Certified lower bound for the bent-tube curvature with Taylor constant C."""
    return float(lower_bound_from_arrays(k, cj.r, cj.theta, cj.kappa, C, base_scal))


def lower_bound_from_arrays(k, r, theta, kappa, C, base_scal):
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0.0):
        raise AxisError("radius must be positive")
    if C < 0:
        raise ParameterError("C must be nonnegative")
    st = np.sin(theta)
    kappa = np.asarray(kappa, dtype=float)
    return (base_scal
            + np.abs(kappa) * (-np.sign(kappa) * 2 * (k - 1) * st / r - C * st)
            + (k - 1) * (k - 2) * st**2 / r**2 - C * st**2 / r)


# ---------------------------------------------------------------------------
# Gajer bound


def gajer_bound(P_family: Sequence[MetricPath], eta: float, n_t: int = 201,
                cap: float = 1.0) -> float:
    """Largest Lambda (<= cap) certified on the sampled family.

    Along g(f(t)), the trace formula gives
      scal >= s - |f''| |tr(g^-1 g')| - f'^2 |Q|,
    Q = (3/4)tr((g^-1 g')^2) - tr(g^-1 g'') - (1/4)tr(g^-1 g')^2.  With C the
    sampled supremum of max(|tr(g^-1 g')|, |Q|) and |f'|, |f''| <= Lambda <= 1,
    the deficit is at most C(|f'| + |f''|) <= 2 C Lambda, so Lambda = eta/(2C).
    """
    if not eta > 0.0:
        raise ParameterError("eta must be positive")
    if len(P_family) == 0:
        raise ParameterError("empty family")
    ts = np.linspace(0.0, 1.0, n_t)
    C = 0.0
    for P in P_family:
        for t in ts:
            a, q = trace_terms(P, t)
            C = max(C, abs(a), abs(q))
    if C == 0.0:
        return float(cap)
    return float(min(cap, eta / (2.0 * C)))
