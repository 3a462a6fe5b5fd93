"""Quick property suite behind ``viscoplast verify``.

Each check returns ``(name, passed, detail)``.  Sizes are chosen so the whole
suite runs in seconds; the test suite runs the heavier versions.
"""

from __future__ import annotations

import logging
import math

import numpy as np

from . import constitutive as cst
from . import diagnostics as dg
from .constitutive import FluidParams
from .elliptic import (EllipticProblem, apply_operator, lame_solve, solve, verify_h2,
                       verify_w2p_1d)
from .field import PeriodicField, PeriodicGrid
from .powerlaw import State, run
from .transport import advance_density

__all__ = ["run_suite", "format_table", "CHECKS"]


def _sym(rng, d, n):
    A = rng.normal(size=(d, d, n))
    return 0.5 * (A + np.swapaxes(A, 0, 1))


def check_monotonicity(rng, trials=2000):
    worst = math.inf
    for q in (1.0, 1.25, 2.0, 3.0):
        for delta in (0.0, 0.1):
            p = FluidParams(q=q, delta=delta)
            C, D = _sym(rng, 3, trials), _sym(rng, 3, trials)
            worst = min(worst, float(np.min(cst.monotonicity_gap(p, C, D))))
    return worst >= -1e-12, f"min gap {worst:.3e}"


def check_symbol(rng, trials=2000):
    worst = math.inf
    for _ in range(4):
        d = int(rng.integers(1, 4))
        mu = rng.uniform(0.1, 3)
        p = FluidParams(mu=mu, lambda_=rng.uniform(-2 * mu + 1e-3, 3), tau_star=rng.uniform(0, 5),
                        delta=rng.uniform(1e-3, 1), q=rng.uniform(1, 4))
        D = _sym(rng, d, trials)
        xi = rng.normal(size=(d, trials))
        eta = rng.normal(size=(d, trials)) + 1j * rng.normal(size=(d, trials))
        val = cst.symbol_form(p, D, xi, eta) / (np.sum(xi**2, 0) * np.sum(np.abs(eta) ** 2, 0))
        worst = min(worst, float(np.min(val)))
    return worst > 0, f"min normalized symbol {worst:.3e}"


def check_tangent(rng):
    p = FluidParams(mu=1.3, lambda_=0.4, tau_star=2.0, delta=0.2, q=1.5)
    D, E = _sym(rng, 3, 50), _sym(rng, 3, 50)
    h = 1e-6
    fd = (cst.stress_delta(p, D + h * E) - cst.stress_delta(p, D - h * E)) / (2 * h)
    err = float(np.max(np.abs(fd - cst.stress_tangent(p, D, E))))
    return err < 1e-7, f"max |FD - tangent| {err:.2e}"


def check_lame(rng):
    grid = PeriodicGrid(2, 16)
    p = FluidParams(mu=1.2, lambda_=0.7)
    f = PeriodicField(grid, grid.project_nyquist_free(rng.normal(size=(2, 16, 16))), "vector")
    err = grid.norm2(solve(EllipticProblem(p, f), tol=1e-12).u.values - lame_solve(p, f).values)
    return err < 1e-10, f"L2 difference {err:.2e}"


def _manufactured_1d(grid, p):
    x = grid.coords()[0]
    u = PeriodicField(grid, (np.sin(x) + 0.3 * np.cos(2 * x))[None], "vector")
    return u, apply_operator(p, u)


def check_w2p(rng):
    grid = PeriodicGrid(1, 128)
    worst = 0.0
    ok = True
    for q in (1.0, 1.5, 2.0):
        for delta in (1.0, 0.01):
            p = FluidParams(mu=1.0, tau_star=1.0, delta=delta, q=q)
            u_ex, f = _manufactured_1d(grid, p)
            sol = solve(EllipticProblem(p, f), tol=1e-10)
            for pe in (2.0, 4.0, 6.0):
                r = verify_w2p_1d(p, sol.u, f, pe)
                ok &= r["satisfied"]
                worst = max(worst, r["norm_uxx"] / r["norm_f_over_mu"])
    return bool(ok), f"max ||u''||/(||f||/mu) {worst:.4f}"


def check_h2(rng):
    grid = PeriodicGrid(2, 16)
    X, Y = grid.coords()
    p = FluidParams(mu=1.0, lambda_=0.5, tau_star=1.0, delta=0.5, q=1.5)
    u = PeriodicField(grid, np.stack([np.sin(X) * np.cos(Y), 0.5 * np.cos(2 * X)]), "vector")
    f = apply_operator(p, u)
    sol = solve(EllipticProblem(p, f), tol=1e-10)
    r = verify_h2(p, sol.u, f)
    return r["satisfied"], f"lhs {r['curl_term'] + r['div_term']:.4g} <= {r['rhs_bound']:.4g}"


def check_transport(rng):
    grid = PeriodicGrid(2, 32)
    X, Y = grid.coords()
    rho = PeriodicField(grid, 1 + 0.3 * np.sin(X) * np.cos(Y))
    u = PeriodicField(grid, np.stack([np.cos(Y), 0.5 * np.sin(X + Y)]), "vector")
    m0 = rho.integral()
    for _ in range(50):
        rho = advance_density(rho, u, 0.01)
    drift = abs(rho.integral() - m0) / m0
    return drift < 1e-12, f"relative mass drift {drift:.2e}"


def check_energy(rng):
    grid = PeriodicGrid(1, 32)
    x = grid.coords()[0]
    p = FluidParams(mu=0.5, tau_star=0.5, delta=0.2, q=1.5)
    rho0 = PeriodicField(grid, 1 + 0.2 * np.sin(x))
    u0 = PeriodicField(grid, (0.3 * np.sin(x))[None], "vector")
    traj = run(p, rho0, u0, T_end=0.1, dt=5e-3, output_every=5, stress="implicit")
    E = np.array([r.energy for r in traj.records])
    inc = float(np.max(np.diff(E))) if E.size > 1 else 0.0
    jmin = min(r.j_min for r in traj.records)
    drift = traj.meta["mass_drift"]
    ok = inc <= 1e-8 * E[0] and drift < 1e-8 and jmin >= -1e-10
    return ok, f"max dE {inc:.2e}, mass drift {drift:.2e}, min J {jmin:.2e}"


def check_uniqueness_zero(rng):
    grid = PeriodicGrid(1, 16)
    x = grid.coords()[0]
    s = State(PeriodicField(grid, 1 + 0.1 * np.cos(x)), PeriodicField(grid, np.sin(x)[None], "vector"), 0.0)
    d = dg.uniqueness_distance(s, s, FluidParams())
    return d == 0.0, f"distance {d!r}"


CHECKS = [
    ("constitutive monotonicity", check_monotonicity),
    ("strong ellipticity symbol", check_symbol),
    ("stress tangent vs finite differences", check_tangent),
    ("Newtonian solve vs Lame closed form", check_lame),
    ("1D W2p bound (manufactured)", check_w2p),
    ("H2 bound (manufactured, 2D)", check_h2),
    ("transport mass conservation", check_transport),
    ("energy decay, mass, J sign", check_energy),
    ("uniqueness distance of a state to itself", check_uniqueness_zero),
]


def run_suite(seed: int = 0) -> list:
    rows = []
    prev = logging.getLogger("viscoplast").level
    logging.getLogger("viscoplast").setLevel(logging.ERROR)
    try:
        for i, (name, fn) in enumerate(CHECKS):
            rng = np.random.default_rng([seed, i])
            try:
                ok, detail = fn(rng)
            except Exception as exc:  # a crashing check is a failed check
                ok, detail = False, f"{type(exc).__name__}: {exc}"
            rows.append((name, bool(ok), detail))
    finally:
        logging.getLogger("viscoplast").setLevel(prev)
    return rows


def format_table(rows) -> str:
    w = max(len(r[0]) for r in rows)
    lines = [f"{'check':<{w}}  result  detail", "-" * (w + 24)]
    for name, ok, detail in rows:
        lines.append(f"{name:<{w}}  {'PASS' if ok else 'FAIL':<6}  {detail}")
    lines.append(f"{sum(r[1] for r in rows)}/{len(rows)} passed")
    return "\n".join(lines)
