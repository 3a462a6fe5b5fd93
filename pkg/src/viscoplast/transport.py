"""Density transport ``rho_t + div(rho u) = 0`` and its monitors.

Production path: spectral flux divergence with a two-stage SSP Runge-Kutta
update.  Because the spectral divergence has zero mean the discrete mass is
conserved to round-off.  A semi-Lagrangian characteristics integrator is
kept alongside as an independent cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .constitutive import FluidParams
from .errors import CFLViolation, MassLoss
from .field import PeriodicField, PeriodicGrid

__all__ = [
    "DensityPath",
    "advance_density",
    "cfl_limit",
    "clip_density",
    "density_bounds_check",
    "pressure_residual",
    "semi_lagrangian_step",
]


def _vals(x):
    return x.values if isinstance(x, PeriodicField) else np.asarray(x, dtype=float)


def cfl_limit(grid: PeriodicGrid, u, safety: float = 0.5) -> float:
    """Largest admissible step ``safety * h / max|u|`` (``inf`` at rest)."""
    umax = float(np.max(np.abs(_vals(u)))) if np.size(_vals(u)) else 0.0
    return math.inf if umax == 0 else safety * grid.h / umax


def _rhs(grid, rho, u, dealias):
    flux = rho[None] * u
    if dealias:
        flux = grid.dealias(flux)
    return -grid.div(flux)


def advance_array(grid: PeriodicGrid, rho, u, dt, check_cfl=True, dealias=True):
    if dt <= 0:
        raise ValueError("dt must be positive")
    if check_cfl:
        lim = cfl_limit(grid, u)
        if dt > lim * (1 + 1e-12):
            raise CFLViolation(dt, lim)
    r1 = rho + dt * _rhs(grid, rho, u, dealias)
    return 0.5 * rho + 0.5 * (r1 + dt * _rhs(grid, r1, u, dealias))


def advance_density(rho: PeriodicField, u: PeriodicField, dt: float, dealias: bool = True) -> PeriodicField:
    """One SSP-RK2 step of ``rho_t = -div(rho u)`` with ``u`` frozen over the step."""
    out = advance_array(rho.grid, rho.values, _vals(u), dt, dealias=dealias)
    return PeriodicField(rho.grid, out, "scalar")


def clip_density(grid: PeriodicGrid, rho, tol: float = 1e-8):
    """Zero out negative samples, rescale to restore the mass, report the clipped mass.

    Raises :class:`MassLoss` if the clipped mass exceeds ``tol`` times the total.
    """
    neg = rho < 0
    if not np.any(neg):
        return rho, 0.0
    total = float(grid.integrate(rho))
    clipped = float(-grid.integrate(np.where(neg, rho, 0.0)))
    if total <= 0 or clipped > tol * total:
        raise MassLoss(f"clipped mass {clipped:.3e} exceeds {tol:g} of total {total:.3e}")
    out = np.where(neg, 0.0, rho)
    out *= total / float(grid.integrate(out))
    return out, clipped


@dataclass
class DensityPath:
    snapshots: list
    times: np.ndarray = dc_field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if len(self.snapshots) != len(self.times):
            raise ValueError("one time stamp per snapshot required")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    def masses(self):
        return np.array([s.integral() for s in self.snapshots])

    def check(self, mass_rtol=1e-8, neg_tol=1e-12):
        m = self.masses()
        mins = [float(np.min(s.values)) for s in self.snapshots]
        drift = float(np.max(np.abs(m - m[0])) / abs(m[0])) if m[0] != 0 else 0.0
        return {
            "min_rho": min(mins),
            "mass_drift": drift,
            "ok": min(mins) >= -neg_tol and drift <= mass_rtol,
        }


def density_bounds_check(path: DensityPath, u_path, rho0: PeriodicField) -> dict:
    """Compare ``rho`` with ``inf/sup rho0 * exp(-/+ int ||div u||_inf)`` along the path."""
    grid = rho0.grid
    if len(u_path) != len(path.snapshots):
        raise ValueError("u_path and density path lengths differ")
    divmax = np.array([np.max(np.abs(grid.div(_vals(u)))) for u in u_path])
    t = path.times
    integ = np.concatenate([[0.0], np.cumsum(0.5 * (divmax[1:] + divmax[:-1]) * np.diff(t))])
    integ = integ - integ[0]
    lo = float(np.min(rho0.values)) * np.exp(-integ)
    hi = float(np.max(rho0.values)) * np.exp(integ)
    rmin = np.array([np.min(s.values) for s in path.snapshots])
    rmax = np.array([np.max(s.values) for s in path.snapshots])
    viol = np.maximum(np.maximum(lo - rmin, rmax - hi), 0.0)
    return {
        "lower": lo,
        "upper": hi,
        "rho_min": rmin,
        "rho_max": rmax,
        "violation": viol,
        "max_violation": float(np.max(viol)),
    }


def pressure_residual(params: FluidParams, path: DensityPath, u_path) -> np.ndarray:
    """``||p_t + div(p u) + (gamma-1) p div u||_2`` at every snapshot.

    ``p = a rho^gamma``; ``p_t`` by centered differences (one-sided at the ends).
    """
    snaps = path.snapshots
    if len(snaps) < 2:
        raise ValueError("need at least two snapshots")
    grid = snaps[0].grid
    t = path.times
    P = [params.a * np.maximum(s.values, 0.0) ** params.gamma_ for s in snaps]
    out = np.empty(len(snaps))
    for i in range(len(snaps)):
        if i == 0:
            pt = (P[1] - P[0]) / (t[1] - t[0])
        elif i == len(snaps) - 1:
            pt = (P[-1] - P[-2]) / (t[-1] - t[-2])
        else:
            pt = (P[i + 1] - P[i - 1]) / (t[i + 1] - t[i - 1])
        u = _vals(u_path[i])
        res = pt + grid.div(P[i][None] * u) + (params.gamma_ - 1) * P[i] * grid.div(u)
        out[i] = grid.norm2(res)
    return out


# independent oracle ---------------------------------------------------------

def trig_interpolate(grid: PeriodicGrid, values, points) -> np.ndarray:
    """Evaluate the real trigonometric interpolant of ``values`` at ``points``.

    ``points`` has shape ``(dim, npts)``.  The Nyquist mode uses ``cos`` so the
    interpolant is real.  Direct summation, meant for oracle-sized grids.
    """
    n = grid.n
    coef = np.fft.fftn(values) / values.size
    kk = np.fft.fftfreq(n, 1.0 / n)
    scale = 2 * np.pi / grid.length
    mats = []
    for ax in range(grid.dim):
        ph = np.outer(kk, points[ax] * scale)
        E = np.exp(1j * ph)
        E[n // 2] = np.cos(ph[n // 2])
        mats.append(E)
    letters = "abc"[: grid.dim]
    spec = letters + "," + ",".join(f"{c}p" for c in letters) + "->p"
    return np.einsum(spec, coef, *mats).real


def semi_lagrangian_step(rho: PeriodicField, u: PeriodicField, dt: float) -> PeriodicField:
    """Characteristics step: ``rho(x, t+dt) = rho(X, t) exp(-dt div u(x_mid))``.

    Feet of characteristics come from the backward midpoint rule; ``rho`` is
    evaluated there by trigonometric interpolation.  Oracle use only.
    """
    grid = rho.grid
    uv = _vals(u)
    X = np.stack([c.ravel() for c in grid.coords()])
    U = uv.reshape(grid.dim, -1)
    half = X - 0.5 * dt * U
    Umid = np.stack([trig_interpolate(grid, uv[i], half) for i in range(grid.dim)])
    mid = X - 0.5 * dt * Umid
    Umid = np.stack([trig_interpolate(grid, uv[i], mid) for i in range(grid.dim)])
    foot = X - dt * Umid
    divu = grid.div(uv)
    jac = np.exp(-dt * trig_interpolate(grid, divu, mid))
    out = trig_interpolate(grid, rho.values, foot) * jac
    return PeriodicField(grid, out.reshape(grid.shape), "scalar")
