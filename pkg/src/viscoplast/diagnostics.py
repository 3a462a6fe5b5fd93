"""Monitored quantities along a compressible run.

Everything here is a pure function of grid arrays or of state-like objects
exposing ``rho`` and ``u`` fields (see :class:`viscoplast.powerlaw.State`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, astuple, fields

import numpy as np
from scipy.integrate import cumulative_trapezoid

from . import constitutive as cst
from .constitutive import FluidParams
from .errors import GridMismatch
from .field import PeriodicField, PeriodicGrid, sobolev_norm

__all__ = [
    "DiagnosticsRecord",
    "CSV_COLUMNS",
    "total_energy",
    "dissipation",
    "psi",
    "j_integrand_min",
    "energy_ledger",
    "time_derivative",
    "uniqueness_distance",
    "gronwall_hats",
]


@dataclass
class DiagnosticsRecord:
    t: float
    mass: float
    energy: float
    dissipation: float
    psi: float
    j_min: float
    fp_iters: int
    energy_residual: float = 0.0

    def row(self):
        return astuple(self)


CSV_COLUMNS = tuple(f.name for f in fields(DiagnosticsRecord))


def _v(x):
    return x.values if isinstance(x, PeriodicField) else np.asarray(x, dtype=float)


def kinetic_energy(grid: PeriodicGrid, rho, u) -> float:
    return 0.5 * float(grid.integrate(rho * np.sum(u * u, axis=0)))


def internal_energy(grid: PeriodicGrid, p: FluidParams, rho) -> float:
    return p.a / (p.gamma_ - 1) * float(grid.integrate(np.maximum(rho, 0.0) ** p.gamma_))


def energy_arrays(grid, p, rho, u) -> float:
    return kinetic_energy(grid, rho, u) + internal_energy(grid, p, rho)


def total_energy(state, p: FluidParams) -> float:
    """``1/2 int rho|u|^2 + a/(gamma-1) int rho^gamma``."""
    return energy_arrays(state.rho.grid, p, state.rho.values, state.u.values)


def dissipation_array(grid: PeriodicGrid, p: FluidParams, u) -> float:
    d = grid.dim
    mu_s, lam = cst._lame(p, d)
    G = grid.grad(u)
    dv = np.trace(G, axis1=0, axis2=1)
    out = mu_s * grid.inner(G, G) + (lam + mu_s) * grid.inner(dv, dv)
    if p.tau_star > 0:
        D = cst.rate_of_strain(G)
        D2 = cst.frobenius_sq(D)
        B = D2 + p.delta**2
        out += p.tau_star * float(grid.integrate(cst._power(p, B, 0.5 * (p.q - 2), "dissipation") * D2))
    return float(out)


def dissipation(u: PeriodicField, p: FluidParams) -> float:
    """``mu||grad u||^2 + (lambda+mu)||div u||^2 + tau* int B^((q-2)/2)|D(u)|^2``.

    In 1D the viscous part is ``mu ||u_x||^2``.
    """
    return dissipation_array(u.grid, p, u.values)


def pressure_array(p: FluidParams, rho):
    return p.a * np.maximum(rho, 0.0) ** p.gamma_


def psi_arrays(grid, p, rho, u, u_t) -> float:
    G = grid.grad(u)
    P = PeriodicField(grid, pressure_array(p, rho), "scalar")
    return (
        1.0
        + grid.inner(G, G)
        + float(grid.integrate(rho * np.sum(u_t * u_t, axis=0)))
        + sobolev_norm(P, 1, 6)
    )


def psi(state, u_t, p: FluidParams) -> float:
    """``1 + ||grad u||^2 + ||sqrt(rho) u_t||^2 + ||p||_{W^{1,6}}``."""
    return psi_arrays(state.rho.grid, p, state.rho.values, state.u.values, _v(u_t))


def j_min_arrays(grid, p, u, u_t) -> float:
    D = cst.rate_of_strain(grid.grad(u))
    E = cst.rate_of_strain(grid.grad(u_t))
    return float(np.min(cst.lemma_integrand(p, D, E)))


def j_integrand_min(state, u_t, p: FluidParams) -> float:
    """Grid minimum of ``B^((q-4)/2)((q-1)|D(u)|^2 + delta^2)|D(u_t)|^2``."""
    return j_min_arrays(state.u.grid, p, state.u.values, _v(u_t))


def _forcing_at(f_ext, t, shape):
    if f_ext is None:
        return np.zeros(shape)
    if callable(f_ext):
        f_ext = f_ext(t)
    return np.broadcast_to(_v(f_ext), shape)


def ledger_term(grid, p, rho0, u0, rho1, u1, dt, f_mid) -> float:
    """``Delta E + dt Diss(u_mid) - dt int rho_mid f.u_mid`` for one step."""
    um = 0.5 * (u0 + u1)
    rm = 0.5 * (rho0 + rho1)
    dE = energy_arrays(grid, p, rho1, u1) - energy_arrays(grid, p, rho0, u0)
    work = float(grid.integrate(rm * np.sum(f_mid * um, axis=0)))
    return dE + dt * dissipation_array(grid, p, um) - dt * work


def energy_ledger(states, p: FluidParams, f_ext=None) -> np.ndarray:
    """Per-step energy residuals for a trajectory with uniform time step."""
    if len(states) < 2:
        return np.zeros(0)
    grid = states[0].rho.grid
    ts = np.array([s.t for s in states])
    dts = np.diff(ts)
    if not np.allclose(dts, dts[0], rtol=1e-9, atol=0):
        raise ValueError("energy_ledger needs a uniform time step")
    out = np.empty(len(states) - 1)
    for k in range(len(states) - 1):
        a, b = states[k], states[k + 1]
        fm = _forcing_at(f_ext, 0.5 * (a.t + b.t), a.u.values.shape)
        out[k] = ledger_term(grid, p, a.rho.values, a.u.values, b.rho.values, b.u.values, dts[k], fm)
    return out


def time_derivative(states) -> list:
    """``u_t`` at every state: centered differences, one-sided at the ends."""
    n = len(states)
    if n < 2:
        return [np.zeros_like(s.u.values) for s in states]
    out = []
    for i in range(n):
        lo, hi = max(i - 1, 0), min(i + 1, n - 1)
        out.append((states[hi].u.values - states[lo].u.values) / (states[hi].t - states[lo].t))
    return out


def _lp(grid, a, p):
    if p == math.inf:
        return float(np.max(np.abs(a)))
    return float(grid.integrate(np.abs(a) ** p)) ** (1.0 / p)


def uniqueness_distance(s1, s2, p: FluidParams) -> float:
    """``||sqrt(rho1) z||^2 + ||rho1 - rho2||_{L^{3/2}}^2 + ||p1 - p2||^2`` with ``z = u1 - u2``."""
    g1, g2 = s1.rho.grid, s2.rho.grid
    if g1 != g2 or s1.u.grid != s2.u.grid:
        raise GridMismatch("states live on different grids")
    r1, r2 = s1.rho.values, s2.rho.values
    z = s1.u.values - s2.u.values
    th = r1 - r2
    pi = pressure_array(p, r1) - pressure_array(p, r2)
    return (
        float(g1.integrate(r1 * np.sum(z * z, axis=0)))
        + _lp(g1, th, 1.5) ** 2
        + float(g1.integrate(pi * pi))
    )


def gronwall_hats(traj1, traj2, p: FluidParams, f_ext=None) -> dict:
    """Unit-constant versions of the three Gronwall rates, for both orderings.

    For the ordered pair (solution, reference) with reference quantities barred:
      M = 2||grad u_bar||_inf + ||h||_6^2 + 1,  h = f - u_bar_t - u_bar.grad u_bar
      N = ||theta||_6 + ||rho||_6^2 + ||grad rho_bar||_2^2 + ||grad u_bar||_inf + 1
      K = ||pi||_inf + ||p||_inf + ||grad p_bar||_3 + gamma ||grad u_bar||_inf + 1
    Returns per-time rates and the cumulative trapezoid integral of M + N + K;
    ``cumulative`` and ``exponent`` take the larger of the two orderings.
    """
    s1, s2 = list(traj1), list(traj2)
    if len(s1) != len(s2):
        raise ValueError("trajectories must have equal length")
    grid = s1[0].rho.grid
    t = np.array([s.t for s in s1])

    def rates(A, Bref):
        ut = time_derivative(Bref)
        out = np.empty(len(A))
        for i, (a, b) in enumerate(zip(A, Bref)):
            ub = b.u.values
            Gb = grid.grad(ub)
            gub = float(np.max(np.sqrt(cst.frobenius_sq(Gb))))
            adv = np.einsum("ij...,j...->i...", Gb, ub)
            fm = _forcing_at(f_ext, a.t, ub.shape)
            h = fm - ut[i] - adv
            hn = _lp(grid, np.sqrt(np.sum(h * h, axis=0)), 6)
            th = a.rho.values - b.rho.values
            pa, pb = pressure_array(p, a.rho.values), pressure_array(p, b.rho.values)
            grb = grid.grad(b.rho.values)
            gpb = grid.grad(pb)
            M = 2 * gub + hn**2 + 1
            N = _lp(grid, th, 6) + _lp(grid, a.rho.values, 6) ** 2 + grid.inner(grb, grb) + gub + 1
            K = (
                _lp(grid, pa - pb, math.inf)
                + _lp(grid, pa, math.inf)
                + _lp(grid, np.sqrt(np.sum(gpb * gpb, axis=0)), 3)
                + p.gamma_ * gub
                + 1
            )
            out[i] = M + N + K
        return out

    r12 = rates(s1, s2)
    r21 = rates(s2, s1)
    c12 = cumulative_trapezoid(r12, t, initial=0.0) if len(t) > 1 else np.zeros(1)
    c21 = cumulative_trapezoid(r21, t, initial=0.0) if len(t) > 1 else np.zeros(1)
    cum = np.maximum(c12, c21)
    return {"t": t, "rate_12": r12, "rate_21": r21, "exponent_12": float(c12[-1]),
            "exponent_21": float(c21[-1]), "cumulative": cum, "exponent": float(cum[-1])}
