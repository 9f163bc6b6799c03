"""Piecewise closed-form functions of one variable, mollification and calculus.

Every function is an immutable expression tree.  Leaves are piecewise
closed-form data (``PiecewiseFn``) optionally convolved with a scaled bump
(``Mollified``).  Interior nodes scale, combine, compose, restrict, glue or
shift their children.  All nodes evaluate vectorized jets ``(f, f', f'', f''')``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import integrate

from .errors import (
    ConstructionError,
    DomainError,
    GluingError,
    ParameterError,
    SmoothnessError,
)

MAX_ORDER = 3
GL_NODES = 64
_DOMAIN_RTOL = 1e-12


# ---------------------------------------------------------------------------
# bump profile


@lru_cache(maxsize=None)
def _gl_rule(n: int = GL_NODES) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


def _bump_raw_derivs(x: np.ndarray, order: int) -> np.ndarray:
    """Derivatives 0..order of exp(-1/(1-16x^2)), zero outside |x| < 1/4."""
    x0 = np.asarray(x, dtype=float)
    x = np.atleast_1d(x0)
    out = np.zeros((order + 1,) + x.shape)
    inside = np.abs(x) < 0.25
    xi = x[inside]
    w = 1.0 - 16.0 * xi * xi
    e = np.exp(-1.0 / w)
    out[0][inside] = e
    if order >= 1:
        g1 = -32.0 * xi / w**2
        out[1][inside] = g1 * e
    if order >= 2:
        g2 = -32.0 / w**2 - 2048.0 * xi**2 / w**3
        out[2][inside] = (g2 + g1 * g1) * e
    if order >= 3:
        g3 = -6144.0 * xi / w**3 - 196608.0 * xi**3 / w**4
        out[3][inside] = (g3 + 3.0 * g1 * g2 + g1**3) * e
    return out.reshape((order + 1,) + x0.shape)


@lru_cache(maxsize=None)
def bump_normalization() -> float:
    """Integral of the raw bump over (-1/4, 1/4), two 64-node halves."""
    x, w = _gl_rule()
    half = 0.125 * x + 0.125  # nodes on (0, 1/4)
    return float(2.0 * 0.125 * np.dot(w, _bump_raw_derivs(half, 0)[0]))


def bump(x, eps: float = 1.0, order: int = 0) -> np.ndarray:
    """Scaled bump xi_eps(x) = xi(x/eps)/eps and its derivatives.

    ``xi`` is even, smooth, supported in (-1/4, 1/4) with unit integral.
    Returns an array of shape ``(order+1, *x.shape)``.
    """
    x = np.asarray(x, dtype=float)
    c = 1.0 / bump_normalization()
    raw = _bump_raw_derivs(x / eps, order)
    for j in range(order + 1):
        raw[j] *= c / eps ** (j + 1)
    return raw


# ---------------------------------------------------------------------------
# closed-form terms


@dataclass(frozen=True)
class PowLog:
    """coef * x**p * log(x)**m with x = t - center."""

    coef: float
    p: float = 0.0
    m: int = 0
    center: float = 0.0

    def eval(self, t: np.ndarray) -> np.ndarray:
        if self.coef == 0.0:
            return np.zeros_like(t)
        x = t - self.center
        if float(self.p).is_integer():
            ip = int(self.p)
            if ip >= 0:
                v = x**ip
            else:
                with np.errstate(divide="ignore", invalid="ignore"):
                    v = 1.0 / x ** (-ip)
        else:
            with np.errstate(invalid="ignore", divide="ignore"):
                v = np.power(x, self.p)
        if self.m:
            with np.errstate(invalid="ignore", divide="ignore"):
                v = v * np.log(x) ** self.m
        return self.coef * v

    def derivative(self) -> list:
        out = []
        if self.p != 0.0:
            out.append(PowLog(self.coef * self.p, self.p - 1.0, self.m, self.center))
        if self.m > 0:
            out.append(PowLog(self.coef * self.m, self.p - 1.0, self.m - 1, self.center))
        return out

    def antiderivative(self) -> list:
        c, p, m = self.coef, self.p, self.m
        if p == -1.0:
            return [PowLog(c / (m + 1), 0.0, m + 1, self.center)]
        first = PowLog(c / (p + 1.0), p + 1.0, m, self.center)
        if m == 0:
            return [first]
        rest = PowLog(-c * m / (p + 1.0), p, m - 1, self.center).antiderivative()
        return [first] + rest

    def to_json(self) -> dict:
        return {"kind": "powlog", "coef": self.coef, "p": self.p, "m": self.m,
                "center": self.center}


@dataclass(frozen=True)
class Trig:
    """coef * sin(freq*t + phase), or cos when ``cosine`` is set."""

    coef: float
    freq: float = 1.0
    phase: float = 0.0
    cosine: bool = False

    def eval(self, t: np.ndarray) -> np.ndarray:
        arg = self.freq * t + self.phase
        return self.coef * (np.cos(arg) if self.cosine else np.sin(arg))

    def derivative(self) -> list:
        if self.cosine:
            return [Trig(-self.coef * self.freq, self.freq, self.phase, False)]
        return [Trig(self.coef * self.freq, self.freq, self.phase, True)]

    def antiderivative(self) -> list:
        if self.cosine:
            return [Trig(self.coef / self.freq, self.freq, self.phase, False)]
        return [Trig(-self.coef / self.freq, self.freq, self.phase, True)]

    def to_json(self) -> dict:
        return {"kind": "trig", "coef": self.coef, "freq": self.freq,
                "phase": self.phase, "cosine": self.cosine}


@dataclass(frozen=True)
class Exp:
    """coef * exp(rate * (t - center))."""

    coef: float
    rate: float = 1.0
    center: float = 0.0

    def eval(self, t: np.ndarray) -> np.ndarray:
        return self.coef * np.exp(self.rate * (t - self.center))

    def derivative(self) -> list:
        return [Exp(self.coef * self.rate, self.rate, self.center)]

    def antiderivative(self) -> list:
        return [Exp(self.coef / self.rate, self.rate, self.center)]

    def to_json(self) -> dict:
        return {"kind": "exp", "coef": self.coef, "rate": self.rate,
                "center": self.center}


_TERM_KINDS = {"powlog": PowLog, "trig": Trig, "exp": Exp}


def _term_from_json(d: dict):
    d = dict(d)
    cls = _TERM_KINDS[d.pop("kind")]
    return cls(**d)


def poly(coeffs: Sequence[float], center: float = 0.0) -> tuple:
    """Piece sum_i coeffs[i] * (t - center)**i."""
    return tuple(PowLog(float(c), float(i), 0, center) for i, c in enumerate(coeffs) if c != 0.0)


def const(c: float) -> tuple:
    return poly([c])


def sine(coef: float = 1.0, freq: float = 1.0, phase: float = 0.0) -> tuple:
    return (Trig(coef, freq, phase, False),)


def exp_piece(coef: float = 1.0, rate: float = 1.0, center: float = 0.0) -> tuple:
    return (Exp(coef, rate, center),)


def inverse_piece(coef: float, center: float = 0.0) -> tuple:
    """coef / (t - center)."""
    return (PowLog(coef, -1.0, 0, center),)


def _piece_derivative(piece: tuple) -> tuple:
    out = []
    for term in piece:
        out.extend(term.derivative())
    return tuple(out)


def _piece_antiderivative(piece: tuple) -> tuple:
    out = []
    for term in piece:
        out.extend(term.antiderivative())
    return tuple(out)


def _piece_eval(piece: tuple, t: np.ndarray) -> np.ndarray:
    v = np.zeros_like(t)
    for term in piece:
        v = v + term.eval(t)
    return v


def _piece_is_affine(piece: tuple) -> bool:
    return all(isinstance(tm, PowLog) and tm.m == 0 and tm.p in (0.0, 1.0) for tm in piece)


@lru_cache(maxsize=4096)
def _piece_derivs(piece: tuple, order: int) -> tuple:
    out = [piece]
    for _ in range(order):
        out.append(_piece_derivative(out[-1]))
    return tuple(out)


# ---------------------------------------------------------------------------
# node base class


@dataclass(frozen=True)
class JetValue:
    """Value and derivatives of a function at a point (unused orders are 0)."""

    value: float
    d1: float = 0.0
    d2: float = 0.0
    d3: float = 0.0

    def __post_init__(self):
        for name in ("value", "d1", "d2", "d3"):
            if not math.isfinite(getattr(self, name)):
                raise SmoothnessError(f"non-finite jet entry {name}")

    def as_tuple(self, order: int = MAX_ORDER) -> tuple:
        return (self.value, self.d1, self.d2, self.d3)[: order + 1]


class SmoothFn1D:
    """Common interface of every function node.

    Subclasses implement ``_jets(t, order)`` on an already domain-checked 1-D
    array and return an array of shape ``(order+1, len(t))``.
    """

    domain: tuple

    def _jets(self, t: np.ndarray, order: int) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError

    def _check_smooth(self, t: float, order: int) -> None:
        """Raise SmoothnessError if the jet of ``order`` is ambiguous at t."""

    def in_domain(self, t) -> np.ndarray:
        lo, hi = self.domain
        tol = _DOMAIN_RTOL * (1.0 + max(abs(lo), abs(hi)))
        t = np.asarray(t, dtype=float)
        return (t >= lo - tol) & (t <= hi + tol)

    def jets(self, t, order: int = MAX_ORDER) -> np.ndarray:
        if not 0 <= order <= MAX_ORDER:
            raise ParameterError(f"order must be in 0..{MAX_ORDER}, got {order}")
        arr = np.atleast_1d(np.asarray(t, dtype=float))
        flat = arr.ravel()
        if flat.size and not np.all(self.in_domain(flat)):
            bad = flat[~self.in_domain(flat)][0]
            raise DomainError(f"t={bad!r} outside domain {self.domain}")
        lo, hi = self.domain
        flat = np.clip(flat, lo, hi)
        out = self._jets(flat, order)
        return out.reshape((order + 1,) + arr.shape)

    def __call__(self, t):
        v = self.jets(t, 0)[0]
        return float(v[0]) if np.ndim(t) == 0 else v

    def deriv(self, t, n: int = 1):
        v = self.jets(t, n)[n]
        return float(v[0]) if np.ndim(t) == 0 else v

    def to_json(self) -> dict:  # pragma: no cover
        raise NotImplementedError


def eval_jet(f: SmoothFn1D, t: float, order: int = MAX_ORDER) -> JetValue:
    """Value and derivatives up to ``order`` of ``f`` at the point ``t``."""
    if not 0 <= order <= MAX_ORDER:
        raise ParameterError(f"order must be in 0..{MAX_ORDER}, got {order}")
    t = float(t)
    if not bool(f.in_domain(t)):
        raise DomainError(f"t={t!r} outside domain {f.domain}")
    f._check_smooth(t, order)
    vals = f.jets(t, order)[:, 0]
    padded = list(map(float, vals)) + [0.0] * (MAX_ORDER - order)
    return JetValue(*padded)


# ---------------------------------------------------------------------------
# piecewise data


@dataclass(frozen=True)
class PiecewiseFn:
    """Closed-form pieces on consecutive intervals [b_i, b_{i+1}).

    Pieces are left-closed and right-open, except that the last piece also
    owns the right end of the domain.  Continuity is not required.
    """

    breakpoints: tuple
    pieces: tuple

    @property
    def domain(self) -> tuple:
        return (self.breakpoints[0], self.breakpoints[-1])

    def piece_index(self, t: np.ndarray) -> np.ndarray:
        b = np.asarray(self.breakpoints)
        idx = np.searchsorted(b, t, side="right") - 1
        return np.clip(idx, 0, len(self.pieces) - 1)

    def jets(self, t: np.ndarray, order: int) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.zeros((order + 1,) + t.shape)
        idx = self.piece_index(t)
        for i in np.unique(idx):
            sel = idx == i
            ts = t[sel]
            for j, dp in enumerate(_piece_derivs(self.pieces[i], order)):
                out[j][sel] = _piece_eval(dp, ts)
        return out

    def one_sided(self, i_piece: int, t: float, order: int) -> np.ndarray:
        derivs = _piece_derivs(self.pieces[i_piece], order)
        ta = np.array([t])
        return np.array([_piece_eval(dp, ta)[0] for dp in derivs])

    def jumps(self, order: int) -> np.ndarray:
        """Jumps right-minus-left of derivatives 0..order at interior breakpoints."""
        n_int = len(self.breakpoints) - 2
        out = np.zeros((max(n_int, 0), order + 1))
        for k in range(n_int):
            b = self.breakpoints[k + 1]
            out[k] = self.one_sided(k + 1, b, order) - self.one_sided(k, b, order)
        return out

    def to_json(self) -> dict:
        return {
            "breakpoints": list(map(float, self.breakpoints)),
            "pieces": [[tm.to_json() for tm in p] for p in self.pieces],
        }

    @staticmethod
    def from_json(d: dict) -> "PiecewiseFn":
        return make_piecewise(
            d["breakpoints"], [tuple(_term_from_json(t) for t in p) for p in d["pieces"]]
        )


def make_piecewise(breakpoints: Sequence[float], pieces: Sequence) -> PiecewiseFn:
    """Build piecewise data; one piece (tuple of terms) per interval."""
    b = tuple(float(x) for x in breakpoints)
    if len(b) < 2:
        raise ConstructionError("need at least two breakpoints")
    if not all(np.isfinite(b)):
        raise ConstructionError("breakpoints must be finite")
    if any(b2 <= b1 for b1, b2 in zip(b, b[1:])):
        raise ConstructionError("breakpoints must be strictly increasing")
    ps = tuple(tuple(p) for p in pieces)
    if len(ps) != len(b) - 1:
        raise ConstructionError(
            f"{len(b) - 1} intervals but {len(ps)} pieces (gaps or overlaps)"
        )
    for p in ps:
        for term in p:
            if not isinstance(term, (PowLog, Trig, Exp)):
                raise ConstructionError(f"unsupported term {term!r}")
    return PiecewiseFn(b, ps)


def _antiderivative_pw(pw: PiecewiseFn) -> PiecewiseFn:
    """Continuous antiderivative vanishing at the left end of the domain."""
    new = []
    left_val = 0.0
    for i, piece in enumerate(pw.pieces):
        a = pw.breakpoints[i]
        anti = _piece_antiderivative(piece)
        shift = left_val - _piece_eval(anti, np.array([a]))[0]
        anti = anti + const(shift)
        new.append(anti)
        left_val = _piece_eval(anti, np.array([pw.breakpoints[i + 1]]))[0]
    return PiecewiseFn(pw.breakpoints, tuple(new))


# ---------------------------------------------------------------------------
# leaf node: piecewise data, optionally mollified


@dataclass(frozen=True)
class Mollified(SmoothFn1D):
    """``base`` convolved with the bump of radius ``epsilon`` (0 = no smoothing).

    Derivatives are convolutions of the piecewise derivative data plus jump
    contributions at breakpoints inside the bump window, so the derivative
    passes through the convolution exactly.
    """

    base: PiecewiseFn
    epsilon: float = 0.0
    domain: tuple = field(init=False)

    def __post_init__(self):
        lo, hi = self.base.domain
        q = self.epsilon / 4.0
        object.__setattr__(self, "domain", (lo + q, hi - q))

    @property
    def mollification_radius(self) -> float:
        return self.epsilon

    def _jets(self, t: np.ndarray, order: int) -> np.ndarray:
        if self.epsilon == 0.0:
            return self.base.jets(t, order)
        eps = self.epsilon
        q = eps / 4.0
        b = np.asarray(self.base.breakpoints[1:-1])
        # split point: the (at most one) breakpoint inside the window, else t
        if b.size:
            k = np.clip(np.searchsorted(b, t), 0, b.size - 1)
            k2 = np.clip(k - 1, 0, b.size - 1)
            near = np.where(np.abs(b[k] - t) < np.abs(b[k2] - t), k, k2)
            bn = b[near]
            inside = np.abs(bn - t) < q
            split = np.where(inside, bn, t)
        else:
            inside = np.zeros(t.shape, dtype=bool)
            split = t
            near = np.zeros(t.shape, dtype=int)
            bn = t
        # three sub-intervals [lo, s1], [s1, s2], [s2, hi] split at t and at
        # the breakpoint; each half of the bump is integrated separately
        x, w = _gl_rule()
        # nodes are placed by their offsets from t, so the kernel argument
        # carries no cancellation error when eps is tiny relative to |t|
        rel = split - t
        zero = np.zeros_like(t)
        cuts = [zero - q, np.minimum(zero, rel), np.maximum(zero, rel), zero + q]
        offs, ws = [], []
        for a_, b_ in zip(cuts, cuts[1:]):
            hh = 0.5 * (b_ - a_)
            offs.append((a_ + hh)[:, None] + hh[:, None] * x[None, :])
            ws.append(hh[:, None] * w[None, :])
        offs = np.concatenate(offs, axis=1)
        ws = np.concatenate(ws, axis=1)
        ys = t[:, None] + offs
        kern = bump(-offs, eps, 0)[0] * ws
        data = self.base.jets(ys, order)
        out = np.einsum("jnk,nk->jn", data, kern)
        if order >= 1 and np.any(inside):
            J = self.base.jumps(order - 1)
            sel = np.nonzero(inside)[0]
            dxi = bump(-rel[sel], eps, order - 1)
            Js = J[near[sel]]
            for j in range(1, order + 1):
                acc = np.zeros(sel.size)
                for m in range(j):
                    acc += Js[:, m] * dxi[j - 1 - m]
                out[j][sel] += acc
        return out

    def _check_smooth(self, t: float, order: int) -> None:
        if self.epsilon > 0.0:
            return
        bps = self.base.breakpoints
        for i in range(1, len(bps) - 1):
            if t == bps[i]:
                left = self.base.one_sided(i - 1, t, order)
                right = self.base.one_sided(i, t, order)
                scale = 1.0 + np.abs(left) + np.abs(right)
                if np.any(np.abs(left - right) > 1e-12 * scale):
                    bad = int(np.argmax(np.abs(left - right) > 1e-12 * scale))
                    raise SmoothnessError(
                        f"derivative of order {bad} jumps at breakpoint t={t}"
                    )

    def to_json(self) -> dict:
        d = {"kind": "mollified"}
        d.update(self.base.to_json())
        d["epsilon"] = self.epsilon
        return d


def as_smooth(pw: PiecewiseFn) -> Mollified:
    """Wrap piecewise data as an unmollified function node."""
    return Mollified(pw, 0.0)


def mollify(f: PiecewiseFn, eps: float) -> Mollified:
    """Convolve piecewise data with the bump of radius ``eps``.

    The bump is supported in (-eps/4, eps/4); the result is defined on the
    base domain shrunk by eps/4 at both ends.
    """
    if isinstance(f, Mollified):
        if f.epsilon != 0.0:
            raise ConstructionError("input is already mollified")
        f = f.base
    if not eps > 0.0:
        raise ParameterError("mollification radius must be positive")
    shortest = min(b - a for a, b in zip(f.breakpoints, f.breakpoints[1:]))
    if eps >= shortest / 2.0:
        raise ConstructionError(
            f"radius {eps} not below half the shortest piece ({shortest})"
        )
    return Mollified(f, float(eps))


# ---------------------------------------------------------------------------
# interior nodes


@dataclass(frozen=True)
class ScaledWarp(SmoothFn1D):
    """t -> theta * f(t / theta)."""

    f: SmoothFn1D
    theta: float
    domain: tuple = field(init=False)

    def __post_init__(self):
        lo, hi = self.f.domain
        object.__setattr__(self, "domain", (self.theta * lo, self.theta * hi))

    def _jets(self, t, order):
        inner = self.f.jets(t / self.theta, order)
        for j in range(order + 1):
            inner[j] *= self.theta ** (1 - j)
        return inner

    def _check_smooth(self, t, order):
        self.f._check_smooth(t / self.theta, order)

    def to_json(self):
        return {"kind": "scaled", "theta": self.theta, "f": self.f.to_json()}


@dataclass(frozen=True)
class LinearCombination(SmoothFn1D):
    """sum_i coefs[i] * fns[i](t) + affine part a0 + a1 * t."""

    coefs: tuple
    fns: tuple
    affine: tuple = (0.0, 0.0)
    domain: tuple = field(init=False)

    def __post_init__(self):
        lo = max(f.domain[0] for f in self.fns)
        hi = min(f.domain[1] for f in self.fns)
        object.__setattr__(self, "domain", (lo, hi))

    def _jets(self, t, order):
        out = np.zeros((order + 1, t.size))
        for c, f in zip(self.coefs, self.fns):
            if c != 0.0:
                out += c * f.jets(t, order)
        out[0] += self.affine[0] + self.affine[1] * t
        if order >= 1:
            out[1] += self.affine[1]
        return out

    def _check_smooth(self, t, order):
        for c, f in zip(self.coefs, self.fns):
            if c != 0.0:
                f._check_smooth(t, order)

    def to_json(self):
        return {"kind": "combination", "coefs": list(self.coefs),
                "fns": [f.to_json() for f in self.fns], "affine": list(self.affine)}


@dataclass(frozen=True)
class Composed(SmoothFn1D):
    """outer(inner(t)) with jets by the chain rule to third order."""

    outer: SmoothFn1D
    inner: SmoothFn1D
    domain: tuple = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "domain", self.inner.domain)

    def _jets(self, t, order):
        h = self.inner.jets(t, order)
        lo, hi = self.outer.domain
        if not np.all(self.outer.in_domain(h[0])):
            raise DomainError("inner function leaves the domain of the outer one")
        f = self.outer.jets(np.clip(h[0], lo, hi), order)
        out = np.zeros_like(h)
        out[0] = f[0]
        if order >= 1:
            out[1] = f[1] * h[1]
        if order >= 2:
            out[2] = f[2] * h[1] ** 2 + f[1] * h[2]
        if order >= 3:
            out[3] = f[3] * h[1] ** 3 + 3.0 * f[2] * h[1] * h[2] + f[1] * h[3]
        return out

    def _check_smooth(self, t, order):
        self.inner._check_smooth(t, order)
        self.outer._check_smooth(self.inner(t), order)

    def to_json(self):
        return {"kind": "composed", "outer": self.outer.to_json(),
                "inner": self.inner.to_json()}


@dataclass(frozen=True)
class Restricted(SmoothFn1D):
    """``f`` on the sub-interval [lo, hi] of its domain."""

    f: SmoothFn1D
    lo: float
    hi: float
    domain: tuple = field(init=False)

    def __post_init__(self):
        if not (self.lo < self.hi and self.f.in_domain(self.lo) and self.f.in_domain(self.hi)):
            raise DomainError(f"[{self.lo}, {self.hi}] not inside {self.f.domain}")
        object.__setattr__(self, "domain", (self.lo, self.hi))

    def _jets(self, t, order):
        return self.f.jets(t, order)

    def _check_smooth(self, t, order):
        self.f._check_smooth(t, order)

    def to_json(self):
        return {"kind": "restricted", "lo": self.lo, "hi": self.hi, "f": self.f.to_json()}


@dataclass(frozen=True)
class Shifted(SmoothFn1D):
    """t -> f(t - shift) + offset, defined on ``domain`` (a subset of the shifted one)."""

    f: SmoothFn1D
    shift: float
    offset: float = 0.0
    domain: tuple = field(init=False)

    def __post_init__(self):
        lo, hi = self.f.domain
        object.__setattr__(self, "domain", (lo + self.shift, hi + self.shift))

    def _jets(self, t, order):
        out = self.f.jets(t - self.shift, order)
        out[0] += self.offset
        return out

    def _check_smooth(self, t, order):
        self.f._check_smooth(t - self.shift, order)

    def to_json(self):
        return {"kind": "shifted", "shift": self.shift, "offset": self.offset,
                "f": self.f.to_json()}


@dataclass(frozen=True)
class Glued(SmoothFn1D):
    """Functions on consecutive intervals [cuts[i], cuts[i+1]] (left-closed)."""

    cuts: tuple
    fns: tuple
    domain: tuple = field(init=False)

    def __post_init__(self):
        if len(self.cuts) != len(self.fns) + 1:
            raise ConstructionError("need len(cuts) == len(fns) + 1")
        for a, b, f in zip(self.cuts, self.cuts[1:], self.fns):
            if not (a < b and f.in_domain(a) and f.in_domain(b)):
                raise DomainError(f"[{a}, {b}] not inside {f.domain}")
        object.__setattr__(self, "domain", (self.cuts[0], self.cuts[-1]))

    def _jets(self, t, order):
        idx = np.clip(np.searchsorted(self.cuts, t, side="right") - 1, 0, len(self.fns) - 1)
        out = np.zeros((order + 1, t.size))
        for i in np.unique(idx):
            sel = idx == i
            lo, hi = self.fns[i].domain
            out[:, sel] = self.fns[i].jets(np.clip(t[sel], lo, hi), order)
        return out

    def _check_smooth(self, t, order):
        for i, c in enumerate(self.cuts[1:-1], start=1):
            if t == c:
                left = self.fns[i - 1].jets(t, order)[:, 0]
                right = self.fns[i].jets(t, order)[:, 0]
                scale = 1.0 + np.abs(left) + np.abs(right)
                if np.any(np.abs(left - right) > 1e-9 * scale):
                    raise SmoothnessError(f"glued pieces disagree at t={t}")
        idx = int(np.clip(np.searchsorted(self.cuts, t, side="right") - 1, 0, len(self.fns) - 1))
        self.fns[idx]._check_smooth(t, order)

    def to_json(self):
        return {"kind": "glued", "cuts": list(self.cuts),
                "fns": [f.to_json() for f in self.fns]}


@dataclass(frozen=True)
class QuadIntegrated(SmoothFn1D):
    """value0 + slope0 (t - t0) + int_{t0}^t (t - y) w(y) dy by adaptive quadrature."""

    w: SmoothFn1D
    t0: float
    value0: float
    slope0: float
    domain: tuple = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "domain", self.w.domain)

    def _jets(self, t, order):
        out = np.zeros((order + 1, t.size))
        wf = lambda y: float(self.w(y))
        for n, ti in enumerate(t):
            i1 = integrate.quad(wf, self.t0, ti, epsabs=1e-13, epsrel=1e-12, limit=200)[0]
            i0 = integrate.quad(lambda y: (ti - y) * wf(y), self.t0, ti,
                                epsabs=1e-13, epsrel=1e-12, limit=200)[0]
            out[0, n] = self.value0 + self.slope0 * (ti - self.t0) + i0
            if order >= 1:
                out[1, n] = self.slope0 + i1
        if order >= 2:
            out[2:] = self.w.jets(t, order - 2)
        return out

    def to_json(self):
        return {"kind": "quad_integrated", "t0": self.t0, "value0": self.value0,
                "slope0": self.slope0, "w": self.w.to_json()}


# ---------------------------------------------------------------------------
# operations


def integrate_twice(w: SmoothFn1D, t0: float, value0: float, slope0: float) -> SmoothFn1D:
    """The function u with u(t0)=value0, u'(t0)=slope0 and u''=w.

    Piecewise and mollified piecewise data are integrated in closed form:
    mollification commutes with integration and fixes affine functions, so
    u = mollify(double antiderivative of the base) + affine correction.
    Other nodes fall back to adaptive quadrature.
    """
    if not bool(w.in_domain(t0)):
        raise DomainError(f"t0={t0} outside domain {w.domain}")
    if isinstance(w, PiecewiseFn):
        w = as_smooth(w)
    if not isinstance(w, Mollified):
        return QuadIntegrated(w, float(t0), float(value0), float(slope0))
    base2 = _antiderivative_pw(_antiderivative_pw(w.base))
    trial = Mollified(base2, w.epsilon)
    v, s = trial.jets(np.array([t0]), 1)[:, 0]
    a1 = slope0 - s
    a0 = value0 - v - a1 * t0
    pieces = tuple(p + poly([a0, a1]) for p in base2.pieces)
    return Mollified(PiecewiseFn(base2.breakpoints, pieces), w.epsilon)


def scale_warp(f: SmoothFn1D, theta: float) -> SmoothFn1D:
    """f^theta(t) = theta * f(t / theta)."""
    if not theta > 0.0:
        raise ParameterError(f"scale must be positive, got {theta}")
    return ScaledWarp(f, float(theta))


def convex_combine(f0: SmoothFn1D, f1: SmoothFn1D, lam: float) -> SmoothFn1D:
    """(1 - lam) f0 + lam f1 on the common domain."""
    if not 0.0 <= lam <= 1.0:
        raise ParameterError(f"lambda must lie in [0, 1], got {lam}")
    if not np.allclose(f0.domain, f1.domain, rtol=1e-12, atol=1e-12):
        raise DomainError(f"domains differ: {f0.domain} vs {f1.domain}")
    return LinearCombination((1.0 - lam, float(lam)), (f0, f1))


def restrict(f: SmoothFn1D, lo: float, hi: float) -> SmoothFn1D:
    return Restricted(f, float(lo), float(hi))


def _near_grid(a: float, b: float, n: int = 21) -> np.ndarray:
    return np.linspace(a, b, n)


def compose_warp(f: SmoothFn1D, h: SmoothFn1D, S: float, glue_mode: str,
                 near: float | None = None, tol: float = 1e-8) -> SmoothFn1D:
    """f o h on [0, S], checked to continue smoothly past S.

    ``glue_mode`` is ``"flat_f"`` (f' vanishes near the right end of f) or
    ``"unit_slope_h"`` (h' = 1 near S).  The glued warping function past S
    is t -> f(t - S + R), so the jet of f o h at S must match that of f at R.
    """
    if glue_mode not in ("flat_f", "unit_slope_h"):
        raise ParameterError(f"unknown glue mode {glue_mode!r}")
    R = f.domain[1]
    if near is None:
        near = 1e-3 * min(S, R)
    jh0 = eval_jet(h, 0.0, 3)
    if abs(jh0.value) > tol:
        raise GluingError(f"h(0) = {jh0.value} != 0")
    if np.max(np.abs(h.jets(_near_grid(0.0, near), 1)[1] - 1.0)) > tol:
        raise GluingError("h' is not identically 1 near 0")
    grid = np.linspace(0.0, S, 1001)
    d1 = h.jets(grid, 1)[1]
    if d1.min() < -tol or d1.max() > 1.0 + tol:
        raise GluingError("h' leaves [0, 1]")
    hS = float(h(S))
    if abs(hS - R) > tol * (1.0 + abs(R)):
        raise GluingError(f"h(S) = {hS} does not reach the end R = {R} of f")
    if glue_mode == "flat_f":
        fj = f.jets(_near_grid(R - near, R), 3)[1:]
        if np.max(np.abs(fj)) > tol:
            raise GluingError("f' is not identically 0 near its right end (flat_f)")
    else:
        hj = h.jets(_near_grid(S - near, S), 3)
        if np.max(np.abs(hj[1] - 1.0)) > tol or np.max(np.abs(hj[2:])) > tol:
            raise GluingError("h' is not identically 1 near S (unit_slope_h)")
    out = Composed(f, Restricted(h, 0.0, float(S)))
    jc = out.jets(float(S), 3)[:, 0]
    jf = f.jets(R, 3)[:, 0]
    if np.max(np.abs(jc - jf) / (1.0 + np.abs(jf))) > 1e-6:
        raise GluingError("jet of f o h at S does not match the translated jet of f")
    return out


# ---------------------------------------------------------------------------
# serialization


def to_json(f) -> dict:
    return f.to_json()


def from_json(d: dict) -> SmoothFn1D:
    kind = d.get("kind", "mollified")
    if kind == "mollified":
        return Mollified(PiecewiseFn.from_json(d), float(d.get("epsilon", 0.0)))
    if kind == "scaled":
        return ScaledWarp(from_json(d["f"]), d["theta"])
    if kind == "combination":
        return LinearCombination(tuple(d["coefs"]), tuple(from_json(x) for x in d["fns"]),
                                 tuple(d["affine"]))
    if kind == "composed":
        return Composed(from_json(d["outer"]), from_json(d["inner"]))
    if kind == "restricted":
        return Restricted(from_json(d["f"]), d["lo"], d["hi"])
    if kind == "shifted":
        return Shifted(from_json(d["f"]), d["shift"], d["offset"])
    if kind == "glued":
        return Glued(tuple(d["cuts"]), tuple(from_json(x) for x in d["fns"]))
    if kind == "quad_integrated":
        return QuadIntegrated(from_json(d["w"]), d["t0"], d["value0"], d["slope0"])
    raise ConstructionError(f"unknown node kind {kind!r}")


# ---------------------------------------------------------------------------
# handy constructors


def identity(lo: float, hi: float) -> Mollified:
    return as_smooth(make_piecewise([lo, hi], [poly([0.0, 1.0])]))


def constant(c: float, lo: float, hi: float) -> Mollified:
    return as_smooth(make_piecewise([lo, hi], [const(c)]))


def sin_fn(lo: float, hi: float) -> Mollified:
    return as_smooth(make_piecewise([lo, hi], [sine()]))


def step_data(lo: float, hi: float, cuts: Sequence[float], values: Sequence[float]) -> PiecewiseFn:
    """Piecewise-constant data: values[i] on [c_i, c_{i+1}) with c = (lo, *cuts, hi)."""
    return make_piecewise([lo, *cuts, hi], [const(v) for v in values])


def smooth_step(a: float, b: float, lo: float, hi: float) -> Mollified:
    """Smooth monotone step from 0 (t <= a) to 1 (t >= b) with |H'| = O(1/(b-a)).

    Built as a linear ramp of width 0.6(b-a) mollified with bump half-width
    0.2(b-a), so the transition zone is exactly [a, b] and every derivative
    stays within the envelope of the ramp data.
    """
    w = b - a
    c = 0.5 * (a + b)
    eps = 0.8 * w
    ramp_lo, ramp_hi = c - 0.3 * w, c + 0.3 * w
    lo_ = min(lo, a - 2 * w) - eps
    hi_ = max(hi, b + 2 * w) + eps
    pw = make_piecewise(
        [lo_, ramp_lo, ramp_hi, hi_],
        [const(0.0), poly([0.0, 1.0 / (0.6 * w)], ramp_lo), const(1.0)],
    )
    return Mollified(pw, eps)
