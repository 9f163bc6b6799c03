"""Command-line runs: construct, verify and export reports.

Every command writes one JSON document
``{meta: {version, seed, timestamp}, params, reports, pass}`` and exits with
0 when every embedded report passes, 1 on a failed report or an infeasible
constant chain, and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import math
import os
import sys
from importlib import resources
from typing import Sequence

import numpy as np

from . import __version__
from . import curvature as cv
from . import deform as dfm
from . import fncore as fc
from . import glcurve as gc
from .errors import GLLabError, InfeasibleError, ParameterError
from .torpedo import build_torpedo, validate_torpedo

COMMANDS = ("torpedo", "curve", "flatten", "match-torpedo", "verify-identities",
            "oracle-compare")


def load_defaults() -> dict:
    with resources.files("gllab").joinpath("defaults.json").open("r") as fh:
        return json.load(fh)


def thread_cap() -> int | None:
    """Parallelism cap from GLLAB_THREADS (runs are single-threaded, so any cap holds)."""
    raw = os.environ.get("GLLAB_THREADS")
    if raw is None or raw == "":
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ParameterError(f"GLLAB_THREADS must be a positive integer, got {raw!r}")
    if n < 1:
        raise ParameterError(f"GLLAB_THREADS must be a positive integer, got {raw!r}")
    return n


# ---------------------------------------------------------------------------
# report files


def _clean(obj):
    """JSON-ready copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return obj


def envelope(reports: Sequence[cv.CurvatureReport], params: dict | None = None,
             seed: int = 0, timestamp: str | None = None) -> dict:
    if timestamp is None:
        timestamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    return {
        "meta": {"version": __version__, "seed": int(seed), "timestamp": timestamp},
        "params": _clean(params or {}),
        "reports": [_clean(r.to_json()) for r in reports],
        "pass": all(r.passed for r in reports),
    }


def write_report(path: str, reports: Sequence[cv.CurvatureReport], params: dict | None = None,
                 seed: int = 0, timestamp: str | None = None) -> dict:
    """Write the envelope to ``path`` ("-" for stdout); Python floats print as
    the shortest decimal that round-trips."""
    doc = envelope(reports, params, seed, timestamp)
    text = json.dumps(doc, indent=1, allow_nan=False) + "\n"
    if path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)
    return doc


def read_reports(path: str) -> list:
    with open(path) as fh:
        doc = json.load(fh)
    return [cv.CurvatureReport.from_json(r) for r in doc["reports"]]


def write_csv(path: str, rep: cv.CurvatureReport, columns: Sequence[str],
              value_name: str = "value") -> None:
    """Report samples as CSV with the given sample columns plus the values."""
    cols = [np.asarray(rep.samples[c], dtype=float) for c in columns]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(columns) + [value_name])
        for i, v in enumerate(np.asarray(rep.values, dtype=float)):
            w.writerow([repr(float(c[i])) for c in cols] + [repr(float(v))])


# ---------------------------------------------------------------------------
# identity suite


def _error_report(name: str, errors, tol: float, samples: dict | None = None,
                  checks: dict | None = None) -> cv.CurvatureReport:
    """Errors as a report: values are -error against the bound -tol."""
    err = np.ravel(np.asarray(errors, dtype=float))
    samples = samples or {"case": np.arange(err.size, dtype=float)}
    return cv.make_report(name, samples, -err, -tol, checks)


def random_curve(rng: np.random.Generator) -> gc.OdeCurve:
    """Smooth plane curve from a random trigonometric curvature law."""
    m = int(rng.integers(1, 4))
    piece = tuple(fc.Trig(float(rng.uniform(-1, 1)), float(rng.uniform(0.5, 4)),
                          float(rng.uniform(0, 2 * math.pi))) for _ in range(m))
    r0 = float(rng.uniform(1.0, 2.0))
    kappa = fc.as_smooth(fc.make_piecewise([-1.0, r0], [piece]))
    start = gc.CurveJet(0.0, r0, float(rng.uniform(0.2, 1.3)), float(kappa(0.0)))
    return gc.curve_from_curvature(kappa, start, 0.5 * r0)


def revolution_identity(rng, n_curves: int = 20, ks=(3, 4, 5), n: int = 200,
                        tol: float = 1e-8) -> cv.CurvatureReport:
    """Bent-tube curvature at A = 0 against sigma of the radius profile r(s)."""
    errs = []
    for _ in range(n_curves):
        c = random_curve(rng)
        ss = np.linspace(0.0, c.length, n)
        y, r, th, ka = c.jets(ss)
        for k in ks:
            tube = np.array([cv.scal_revolution(c, k, s) for s in ss])
            prof = cv.sigma_from_jets(k, r, -np.cos(th), ka * np.sin(th))
            errs.append(float(np.max(np.abs(tube - prof))))
    return _error_report("revolution_identity", errs, tol)


def random_concave_warp(rng, R: float = 2.0) -> fc.SmoothFn1D:
    """sum_i w_i c_i sin(t / c_i) with weights summing to one."""
    m = int(rng.integers(1, 4))
    w = rng.dirichlet(np.ones(m))
    c = rng.uniform(R / 1.4, 3 * R, m)
    piece = tuple(fc.Trig(float(wi * ci), float(1.0 / ci)) for wi, ci in zip(w, c))
    return fc.as_smooth(fc.make_piecewise([0.0, R], [piece]))


def scaling_identity(rng, n: int = 20, thetas=(0.3, 1.0, 2.5), ks=(3, 4, 5, 6),
                     tol: float = 1e-10) -> cv.CurvatureReport:
    """sigma(f^theta)(theta t) = sigma(f)(t) / theta^2, relative to max(1, |rhs|)."""
    errs = []
    for _ in range(n):
        f = random_concave_warp(rng)
        t = np.linspace(0.0, f.domain[1], 60)
        for th in thetas:
            for k in ks:
                lhs = cv.sigma_fn(fc.scale_warp(f, th), k, th * t)
                rhs = cv.sigma_fn(f, k, t) / th**2
                errs.append(float(np.max(np.abs(lhs - rhs)) / max(1.0, np.max(np.abs(rhs)))))
    return _error_report("scaling_identity", errs, tol)


def conserved_quantity(rng, n: int = 20, tol: float = 1e-8,
                       terminal_tol: float = 1e-6) -> cv.CurvatureReport:
    """Relative drift of the bend ODE's conserved quantity, terminal value h(T) = C^a."""
    drift, term = [], 0.0
    for _ in range(n):
        a = float(rng.uniform(0.5, 4.0))
        f0 = float(rng.uniform(0.05, 2.0))
        slope = -float(10 ** rng.uniform(-3, 1.3))
        h, T = gc.bend_profile_solve(a, f0, slope)
        c0 = gc.conserved_quantity(f0, slope, a)
        j = h.jets(np.linspace(0.0, T, 300), 1)
        drift.append(float(np.max(np.abs(gc.conserved_quantity(j[0], j[1], a) - c0)) / c0))
        term = max(term, abs(float(h(T)) - c0**a) / c0**a)
    return _error_report("conserved_quantity", drift, tol,
                         checks={"terminal_value": terminal_tol - term})


def _random_piecewise(rng) -> tuple:
    """Random piecewise data mixing affine and curved pieces; returns (pw, affine flags)."""
    m = int(rng.integers(2, 6))
    bps = np.concatenate([[0.0], np.sort(rng.uniform(0.5, 9.5, m - 1)), [10.0]])
    while np.min(np.diff(bps)) < 0.3:
        bps = np.concatenate([[0.0], np.sort(rng.uniform(0.5, 9.5, m - 1)), [10.0]])
    pieces, flags = [], []
    for i in range(m):
        if rng.uniform() < 0.6:
            pieces.append(fc.poly([float(rng.normal()), float(rng.normal())], float(bps[i])))
            flags.append(True)
        else:
            pieces.append(fc.poly([float(v) for v in rng.normal(size=4)], float(bps[i]))
                          + fc.sine(float(rng.normal()), float(rng.uniform(0.5, 3))))
            flags.append(False)
    return fc.make_piecewise(bps, pieces), flags


def mollifier_affine(rng, n: int = 100, tol: float = 1e-10) -> cv.CurvatureReport:
    """Mollification leaves value and slope unchanged where the data are affine."""
    errs = []
    for _ in range(n):
        pw, flags = _random_piecewise(rng)
        bps = np.asarray(pw.breakpoints)
        eps = float(rng.uniform(0.05, 0.45)) * np.min(np.diff(bps))
        m = fc.mollify(pw, eps)
        q = eps / 4.0
        worst = 0.0
        for i, aff in enumerate(flags):
            if not aff:
                continue
            lo, hi = bps[i] + q, bps[i + 1] - q
            lo, hi = max(lo, m.domain[0]), min(hi, m.domain[1])
            t = np.linspace(lo, hi, 50)
            jm, jb = m.jets(t, 1), pw.jets(t, 1)
            worst = max(worst, float(np.max(np.abs(jm - jb))))
        errs.append(worst)
    return _error_report("mollifier_affine", errs, tol)


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(1.0, abs(b))


def oracle_agreement(rng, n_random: int = 10, d_max: int = 3,
                     tol: float = 1e-5) -> cv.CurvatureReport:
    """scal_trace_path against the finite-difference oracle.

    Conformal torus paths (also against the closed form -2d phi'' - d(d+1) phi'^2)
    for d = 1..d_max and random diagonal paths.  Errors are relative to
    max(1, |exact|).
    """
    errs = []
    closed = 0.0
    phi = fc.as_smooth(fc.make_piecewise([-1.0, 2.0], [fc.sine(0.3, 2.0) + fc.poly([0.0, 0.2])]))
    for d in range(1, d_max + 1):
        P = cv.conformal_path(phi, d)
        for t in (0.2, 0.5, 0.8):
            x = np.zeros(d + 1)
            x[0] = t
            exact = cv.scal_trace_path(P, t)
            p0, p1, p2 = phi.jets(t, 2)[:, 0]
            closed = max(closed, _rel(exact, -2 * d * p2 - d * (d + 1) * p1**2))
            errs.append(_rel(cv.fd_oracle_scal(cv.path_sampler(P), x, d + 1), exact))
    for _ in range(n_random):
        d = int(rng.integers(1, d_max + 1))
        fs = []
        for _ in range(d):
            piece = (fc.poly([1.0, float(rng.uniform(-0.4, 0.4))])
                     + fc.sine(float(rng.uniform(0.05, 0.2)), float(rng.uniform(1, 3))))
            fs.append(fc.as_smooth(fc.make_piecewise([-1.0, 2.0], [piece])))
        P = cv.diagonal_path(fs)
        t = float(rng.uniform(0.1, 0.9))
        x = np.zeros(d + 1)
        x[0] = t
        errs.append(_rel(cv.fd_oracle_scal(cv.path_sampler(P), x, d + 1),
                         cv.scal_trace_path(P, t)))
    return _error_report("oracle_agreement", errs, tol, checks={"closed_form": 1e-12 - closed})


def verify_identities(seed: int = 0) -> list:
    """The cross-module identity suite on instances drawn from ``seed``."""
    rng = np.random.default_rng(seed)
    return [revolution_identity(rng), scaling_identity(rng), conserved_quantity(rng),
            mollifier_affine(rng), oracle_agreement(rng)]


# ---------------------------------------------------------------------------
# commands


def _grid(text: str) -> tuple:
    try:
        vals = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must be L,X,T integers, got {text!r}")
    if len(vals) != 3 or min(vals) < 2:
        raise argparse.ArgumentTypeError(f"grid must be three integers >= 2, got {text!r}")
    return vals


def run_torpedo(args) -> tuple:
    tp = build_torpedo(args.delta, args.eps)
    rep = validate_torpedo(tp.f, args.delta, args.k, args.n)
    params = {"delta": args.delta, "eps": args.eps, "k": args.k, "n": args.n, "R": tp.R}
    if args.csv:
        j = tp.f.jets(rep.samples["t"], 2)
        samples = {"t": rep.samples["t"], "f": j[0], "df": j[1], "d2f": j[2]}
        write_csv(args.csv, cv.make_report("torpedo", samples, rep.values, rep.bound),
                  ["t", "f", "df", "d2f"], "sigma")
    return [rep], params


def run_curve(args) -> tuple:
    p = gc.select_parameters(args.k, args.eta, args.eps0, args.ell, args.r0, C=args.C,
                             base_scal=args.base_scal, force_a=args.force_a)
    fam, rep = gc.build_verified_family(p, np.linspace(0.0, 1.0, args.n_lambda),
                                        n_s=args.n_s)
    axis = float(np.max(np.abs(fam.curves[0].sample(args.n_s)["y"])))
    geo = cv.make_report("gl_geometry", {}, [], 0.0, {
        "inner_width": p.eps0 - fam.r_inf,
        "length": fam.length_achieved - p.ell,
        "axis_curve": 1e-10 - axis,
    })
    params = fam.params.to_json()
    params.update({"n_lambda": args.n_lambda, "n_s": args.n_s, "r_inf": fam.r_inf,
                   "length_achieved": fam.length_achieved})
    if args.csv:
        write_csv(args.csv, rep, ["lambda", "s", "y", "r", "theta", "kappa"], "sigma_model")
    return [rep, geo], params


def _flatten(args):
    bounds = dfm.default_bounds(args.k, args.delta)
    fam = dfm.fixture_family(args.fixture, args.delta)
    n_lam, n_x, n_t = args.grid
    hom = dfm.flatten_homotopy(fam, bounds, n_x=n_x, n_t=n_t)
    params = {"k": args.k, "delta": args.delta, "fixture": args.fixture,
              "grid": list(args.grid), "R": hom.R, "bounds": bounds.to_json(),
              "constants": hom.const.to_json()}
    return hom, bounds, params


def run_flatten(args) -> tuple:
    hom, bounds, params = _flatten(args)
    n_lam, n_x, n_t = args.grid
    rep = dfm.verify_flatten(hom, n_lam=n_lam, xs=np.linspace(0.0, 1.0, n_x), n_t=n_t)
    if args.csv:
        write_csv(args.csv, rep, ["lambda", "x", "t"], "sigma")
    return [rep], params


def run_match(args) -> tuple:
    hom, bounds, params = _flatten(args)
    n_lam, n_x, n_t = args.grid
    eb = dfm.endgame_bounds(bounds)
    m = dfm.torpedo_match_homotopy(dfm.flattened_family(hom), eb, n_t=n_t)
    rep = dfm.verify_match(m, n_lam=n_lam, xs=np.linspace(0.0, 1.0, n_x), n_t=n_t)
    params.update({"endgame_bounds": eb.to_json(), "theta_nodes": list(m.nodes),
                   "thetas": list(m.thetas), "beta": m.beta, "R_inf": m.R_inf,
                   "convex_min_sigma": m.A_cc})
    if args.csv:
        write_csv(args.csv, rep, ["lambda", "x", "t"], "sigma")
    return [rep], params


def run_identities(args) -> tuple:
    return verify_identities(args.seed), {"seed": args.seed}


def run_oracle(args) -> tuple:
    rng = np.random.default_rng(args.seed)
    rep = oracle_agreement(rng, args.n_random, args.d_max)
    return [rep], {"n_random": args.n_random, "d_max": args.d_max}


RUNNERS = {"torpedo": run_torpedo, "curve": run_curve, "flatten": run_flatten,
           "match-torpedo": run_match, "verify-identities": run_identities,
           "oracle-compare": run_oracle}


def build_parser(defaults: dict | None = None) -> argparse.ArgumentParser:
    D = load_defaults() if defaults is None else defaults
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="gllab", description=__doc__.splitlines()[0],
                                     formatter_class=fmt)
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=D["out"], help="JSON report path ('-' for stdout)")
    common.add_argument("--csv", default=None, help="optional CSV of the sampled values")
    common.add_argument("--seed", type=int, default=D["seed"], help="seed for random instances")
    sub = parser.add_subparsers(dest="command", required=True)

    d = D["torpedo"]
    p = sub.add_parser("torpedo", parents=[common], formatter_class=fmt,
                       help="build and validate a torpedo function")
    p.add_argument("--delta", type=float, default=d["delta"])
    p.add_argument("--eps", type=float, default=d["eps"])
    p.add_argument("--k", type=int, default=d["k"])
    p.add_argument("--n", type=int, default=d["n"], help="grid points")

    d = D["curve"]
    p = sub.add_parser("curve", parents=[common], formatter_class=fmt,
                       help="build and verify a bending-curve family")
    p.add_argument("--k", type=int, default=d["k"])
    p.add_argument("--eta", type=float, default=d["eta"])
    p.add_argument("--eps0", type=float, default=d["eps0"])
    p.add_argument("--ell", type=float, default=d["ell"])
    p.add_argument("--r0", type=float, default=d["r0"])
    p.add_argument("--C", type=float, default=d["C"], help="Taylor constant of the ambient")
    p.add_argument("--base-scal", type=float, default=d["base_scal"])
    p.add_argument("--force-a", type=float, default=d["force_a"],
                   help="override the exponent a of the inner bend")
    p.add_argument("--n-lambda", type=int, default=d["n_lambda"])
    p.add_argument("--n-s", type=int, default=d["n_s"])

    for name, helptext in (("flatten", "flatten a fixture family near R"),
                           ("match-torpedo", "flatten, then deform to the torpedo")):
        d = D[name]
        p = sub.add_parser(name, parents=[common], formatter_class=fmt, help=helptext)
        p.add_argument("--k", type=int, default=d["k"])
        p.add_argument("--delta", type=float, default=d["delta"])
        p.add_argument("--fixture", choices=("torpedo", "blend"), default=d["fixture"])
        p.add_argument("--grid", type=_grid, default=_grid(d["grid"]),
                       help="lambda, x and t sample counts")

    sub.add_parser("verify-identities", parents=[common], formatter_class=fmt,
                   help="run the identity suite on seeded instances")

    d = D["oracle-compare"]
    p = sub.add_parser("oracle-compare", parents=[common], formatter_class=fmt,
                       help="trace formula against the finite-difference oracle")
    p.add_argument("--n-random", type=int, default=d["n_random"])
    p.add_argument("--d-max", type=int, choices=(1, 2, 3), default=d["d_max"])
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        thread_cap()
        reports, params = RUNNERS[args.command](args)
    except InfeasibleError as exc:
        print(f"gllab {args.command}: {exc}", file=sys.stderr)
        write_report(args.out, [], {"error": str(exc), "constraint": exc.constraint},
                     args.seed)
        return 1
    except ParameterError as exc:
        print(f"gllab {args.command}: {exc}", file=sys.stderr)
        return 2
    except GLLabError as exc:
        print(f"gllab {args.command}: {exc}", file=sys.stderr)
        return 1
    doc = write_report(args.out, reports, params, args.seed)
    for r in reports:
        state = "pass" if r.passed else "FAIL"
        print(f"{r.name}: {state} (margin {r.margin:.3g})", file=sys.stderr)
    return 0 if doc["pass"] else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
