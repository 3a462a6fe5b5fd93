"""Faedo-Galerkin time integrator for the compressible power-law system.

Velocities live in the finite Fourier space ``X_m`` (modes with ``|k_i| <= m``
on every axis); density is carried on the full grid.  Each time step is a
Picard (Banach) iteration

    rho^(k) = T(u_mid^(k-1))                       transport over [t, t+dt]
    M[rho^(k)] u^(k) = M[rho^n] u^n + dt N(rho_mid, u_mid)

with midpoint values ``u_mid = (u^n + u^(k-1))/2``, ``rho_mid = (rho^n + rho^(k))/2``.
With ``stress="implicit"`` the viscous part of ``N`` is instead evaluated at
``(u^n + u^(k))/2`` and solved for by Newton, which removes the step-size
restriction coming from stiff stresses (q = 1 with small delta).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from . import diagnostics as dg
from .constitutive import FluidParams
from .elliptic import _operator, compat_rhs, newton_implicit
from .errors import Blowup, CFLViolation, FixedPointDiverged, NonConvergence, VacuumFloor, ViscoplastError
from .field import PeriodicField, PeriodicGrid
from .transport import advance_array, clip_density

log = logging.getLogger(__name__)

__all__ = [
    "GalerkinSpace",
    "State",
    "Trajectory",
    "mass_apply",
    "mass_solve",
    "momentum_rhs",
    "step",
    "run",
]


class GalerkinSpace:
    """Trigonometric polynomials with ``|k_i| <= m`` on every axis."""

    def __init__(self, grid: PeriodicGrid, m: int | None = None):
        if m is None:
            m = grid.n // 3
        if not 1 <= m < grid.n // 2:
            raise ValueError(f"m must satisfy 1 <= m < n/2, got {m}")
        self.grid = grid
        self.m = int(m)
        mask = np.ones(grid.k2.shape, dtype=bool)
        for idx in grid.mode_index():
            mask &= np.abs(idx) <= self.m
        self.mask = mask
        full = np.ones(grid.shape, dtype=bool)
        kk = np.rint(np.fft.fftfreq(grid.n, 1.0 / grid.n)).astype(int)
        for ax in range(grid.dim):
            shp = [1] * grid.dim
            shp[ax] = grid.n
            full &= (np.abs(kk) <= self.m).reshape(shp)
        self._full_mask = full

    @property
    def dimension(self) -> int:
        """Real dimension per velocity component."""
        return int(np.sum(self._full_mask))

    def project(self, v):
        v = np.asarray(v, dtype=float)
        return self.grid.ifft(self.grid.fft(v) * self.mask)

    def project_field(self, f: PeriodicField) -> PeriodicField:
        return PeriodicField(f.grid, self.project(f.values), f.rank)

    def outside_norm(self, v) -> float:
        """``||(I - P_m) v||_2``."""
        v = np.asarray(v, dtype=float)
        return self.grid.norm2(v - self.project(v))

    def coefficients(self, v) -> np.ndarray:
        """Coefficients in the L2-orthonormal basis ``exp(i k.x)/sqrt|Omega|``."""
        g = self.grid
        axes = tuple(range(v.ndim - g.dim, v.ndim))
        vh = np.fft.fftn(v, axes=axes) * g.cell_volume / math.sqrt(g.volume)
        return vh[..., self._full_mask]

    def from_coefficients(self, c) -> np.ndarray:
        g = self.grid
        c = np.asarray(c)
        vh = np.zeros(c.shape[:-1] + g.shape, dtype=complex)
        vh[..., self._full_mask] = c
        axes = tuple(range(vh.ndim - g.dim, vh.ndim))
        return np.fft.ifftn(vh * math.sqrt(g.volume) / g.cell_volume, axes=axes).real


@dataclass
class State:
    rho: PeriodicField
    u: PeriodicField
    t: float = 0.0

    def pressure(self, p: FluidParams) -> PeriodicField:
        return PeriodicField(self.rho.grid, dg.pressure_array(p, self.rho.values), "scalar")


def _v(x):
    return x.values if isinstance(x, PeriodicField) else np.asarray(x, dtype=float)


def mass_apply(space: GalerkinSpace, rho, v) -> np.ndarray:
    """``P_m(rho v)``; as a bilinear form ``<M[rho] v, w> = int rho v.w``."""
    return space.project(_v(rho)[None] * _v(v))


def mass_solve(space: GalerkinSpace, rho, b, tol: float = 1e-13, rho_floor: float = 1e-8,
               x0=None) -> np.ndarray:
    """Solve ``P_m(rho v) = b`` for ``v`` in ``X_m`` by preconditioned CG."""
    r = _v(rho)
    rmin = float(np.min(r))
    if rmin < rho_floor:
        raise VacuumFloor(rmin, rho_floor)
    grid = space.grid
    b = space.project(_v(b))
    shape = b.shape
    n = b.size
    A = LinearOperator((n, n), matvec=lambda x: space.project(r[None] * x.reshape(shape)).ravel())
    M = LinearOperator((n, n), matvec=lambda x: space.project(x.reshape(shape) / r[None]).ravel())
    atol = tol / math.sqrt(grid.cell_volume)
    x, info = cg(A, b.ravel(), x0=None if x0 is None else _v(x0).ravel(), rtol=0.0, atol=atol,
                 maxiter=1000, M=M)
    if info != 0:
        res = grid.norm2(A @ x - b.ravel())
        raise NonConvergence(info, res, "mass solve")
    return space.project(x.reshape(shape))


def _forcing(f_ext, t, shape):
    if f_ext is None:
        return None
    if callable(f_ext):
        f_ext = f_ext(t)
    return np.broadcast_to(_v(f_ext), shape)


def _rhs_nonstress(p, space, rho, u, f):
    grid = space.grid
    out = -grid.div(grid.dealias(rho[None, None] * u[:, None] * u[None, :]))
    out = out - p.a * grid.grad(grid.dealias(np.maximum(rho, 0.0) ** p.gamma_))
    if f is not None:
        out = out + grid.dealias(rho[None] * f)
    return out


def momentum_rhs(p: FluidParams, state: State, f_ext=None, space: GalerkinSpace | None = None) -> PeriodicField:
    """``P_m[rho f - div(rho u x u) + div S_delta(D u) - a grad rho^gamma]``."""
    grid = state.rho.grid
    space = space or GalerkinSpace(grid)
    rho, u = state.rho.values, state.u.values
    f = _forcing(f_ext, state.t, u.shape)
    out = _rhs_nonstress(p, space, rho, u, f) - _operator(p, grid, u)
    return PeriodicField(grid, space.project(out), "vector")


@dataclass
class StepInfo:
    fp_iters: int
    fp_delta: float
    clip_mass: float
    newton_iters: int = 0


@dataclass
class Solver:
    """Per-step settings shared by :func:`step` and :func:`run`."""

    space: GalerkinSpace
    fp_tol: float = 1e-11
    fp_max: int = 30
    rho_floor: float = 1e-8
    stress: str = "explicit"
    newton_tol: float = 1e-12  # relative to the implicit right-hand side
    clip_tol: float = 1e-8

    def __post_init__(self):
        if self.stress not in ("explicit", "implicit"):
            raise ValueError("stress must be 'explicit' or 'implicit'")


def _step_arrays(p, sv: Solver, rho_n, u_n, t, dt, f_ext):
    space, grid = sv.space, sv.space.grid
    f_mid = _forcing(f_ext, t + 0.5 * dt, u_n.shape)
    base = mass_apply(space, rho_n, u_n)
    u_prev = u_n
    deltas = []
    clip = 0.0
    newton_total = 0
    for k in range(1, sv.fp_max + 1):
        u_mid = 0.5 * (u_n + u_prev)
        try:
            rho_k = advance_array(grid, rho_n, u_mid, dt)
        except CFLViolation:
            if k == 1:
                raise
            break  # the iterate itself left the CFL region
        rho_k, clip = clip_density(grid, rho_k, sv.clip_tol)
        rho_mid = 0.5 * (rho_n + rho_k)
        rho_solve = np.maximum(rho_k, sv.rho_floor)
        rest = base + dt * space.project(_rhs_nonstress(p, space, rho_mid, u_mid, f_mid))
        if sv.stress == "explicit":
            b = rest - dt * space.project(_operator(p, grid, u_mid))
            u_new = mass_solve(space, rho_solve, b, rho_floor=sv.rho_floor, x0=u_prev)
        else:
            g = (rest + mass_apply(space, rho_solve, u_n)) / dt
            w0 = 0.5 * (u_n + u_prev)
            tol = sv.newton_tol * max(grid.norm2(space.project(g)), 1e-300)
            w, _, nit = newton_implicit(p, grid, g, rho_solve, 2.0 / dt, space.mask, w0, tol, 50)
            newton_total += nit
            u_new = space.project(2.0 * w - u_n)
        delta = grid.norm2(u_new - u_prev)
        deltas.append(delta)
        u_prev = u_new
        if delta <= sv.fp_tol * max(1.0, grid.norm2(u_new)):
            return rho_k, u_new, StepInfo(k, delta, clip, newton_total)
        if not math.isfinite(delta) or (k >= 4 and delta > deltas[0] * 1e3):
            break
    raise FixedPointDiverged(len(deltas), deltas[-1] if deltas else math.inf)


def step(p: FluidParams, state: State, f_ext, dt: float, fp_tol: float = 1e-11, fp_max: int = 30,
         space: GalerkinSpace | None = None, stress: str = "explicit", rho_floor: float = 1e-8) -> State:
    """Advance one step by the per-step Picard iteration; returns the new State."""
    space = space or GalerkinSpace(state.rho.grid)
    sv = Solver(space, fp_tol=fp_tol, fp_max=fp_max, stress=stress, rho_floor=rho_floor)
    rho, u, info = _step_arrays(p, sv, state.rho.values, space.project(state.u.values), state.t, dt, f_ext)
    grid = state.rho.grid
    out = State(PeriodicField(grid, rho), PeriodicField(grid, u, "vector"), state.t + dt)
    out.info = info
    return out


@dataclass
class Trajectory:
    """Run output: sampled states, per-step diagnostics and run metadata."""

    states: list = dc_field(default_factory=list)
    records: list = dc_field(default_factory=list)
    completed: bool = False
    error: str | None = None
    clip_mass: float = 0.0
    meta: dict = dc_field(default_factory=dict)

    @property
    def times(self):
        return np.array([s.t for s in self.states])

    def final(self) -> State:
        return self.states[-1]


def check_compatibility(p: FluidParams, rho0: PeriodicField, u0: PeriodicField, g: PeriodicField) -> float:
    """L2 residual of ``-div S(D u0) = sqrt(rho0) g - grad p0`` (mean-free part)."""
    grid = rho0.grid
    rhs = compat_rhs(p, rho0, g).values
    res = grid.project_nyquist_free(_operator(p, grid, u0.values) - rhs)
    return grid.norm2(res)


def run(p: FluidParams, rho0: PeriodicField, u0: PeriodicField, f_ext=None, T_end: float = 0.1,
        dt: float = 1e-3, output_every: int = 1, space: GalerkinSpace | None = None,
        fp_tol: float = 1e-11, fp_max: int = 30, rho_floor: float = 1e-8, psi_max: float = 1e6,
        stress: str = "explicit", g: PeriodicField | None = None, compat_tol: float = 1e-6) -> Trajectory:
    """Integrate from ``(rho0, u0)`` to ``T_end``.

    ``f_ext`` is None, a vector field, or a callable ``t -> field``.  Every
    step produces a :class:`DiagnosticsRecord` (``psi`` and ``j_min`` use the
    centered ``u_t`` and therefore lag one step).  States are kept every
    ``output_every`` steps plus the final one.  On ``psi > psi_max`` a
    :class:`Blowup` is raised; that and every other solver error carry the
    partial trajectory as ``exc.partial``.
    """
    p.check_admissible()
    grid = rho0.grid
    space = space or GalerkinSpace(grid)
    if dt <= 0 or T_end < 0:
        raise ValueError("dt must be positive and T_end nonnegative")
    nsteps = int(round(T_end / dt))
    if abs(nsteps * dt - T_end) > 1e-9 * max(1.0, T_end):
        raise ValueError("T_end must be an integer multiple of dt")
    if np.min(rho0.values) < 0:
        raise ValueError("rho0 must be nonnegative")
    sv = Solver(space, fp_tol=fp_tol, fp_max=fp_max, rho_floor=rho_floor, stress=stress)

    u_init = space.project(u0.values)
    traj = Trajectory(meta={
        "m": space.m, "dt": dt, "T_end": T_end, "nsteps": nsteps, "rho_floor": rho_floor,
        "psi_max": psi_max, "fp_tol": fp_tol, "fp_max": fp_max, "stress": stress,
        "dealias": "2/3 rule on convective, pressure and forcing products",
        "time_quadrature": "midpoint", "u_t": "centered differences, one-sided at ends",
    })
    traj.meta["u0_projection_loss"] = space.outside_norm(u0.values)
    if traj.meta["u0_projection_loss"] > 1e-12 * max(1.0, grid.norm2(u0.values)):
        log.info("u0 projected onto X_m (discarded %.3e)", traj.meta["u0_projection_loss"])
    if g is not None:
        # the condition constrains the datum; projection loss is reported separately
        cres = check_compatibility(p, rho0, u0, g)
        traj.meta["compat_residual"] = cres
        if cres > compat_tol:
            log.warning("initial data violate the compatibility condition (residual %.3e)", cres)
    else:
        log.warning("no compatibility datum g given; u0 used as is")

    rho_c, u_c, t_c = rho0.values.copy(), u_init, 0.0
    mass0 = float(grid.integrate(rho_c))
    hist = [(t_c, rho_c, u_c, 0, 0.0)]  # (t, rho, u, fp_iters, energy residual)

    def emit(i):
        # record for hist[i], needs neighbours for u_t
        t, rho, u, fpi, eres = hist[i]
        lo, hi = max(i - 1, 0), min(i + 1, len(hist) - 1)
        if hi == lo:
            ut = np.zeros_like(u)
        else:
            ut = (hist[hi][2] - hist[lo][2]) / (hist[hi][0] - hist[lo][0])
        ps = dg.psi_arrays(grid, p, rho, u, ut)
        rec = dg.DiagnosticsRecord(
            t=t, mass=float(grid.integrate(rho)), energy=dg.energy_arrays(grid, p, rho, u),
            dissipation=dg.dissipation_array(grid, p, u), psi=ps,
            j_min=dg.j_min_arrays(grid, p, u, ut), fp_iters=fpi, energy_residual=eres,
        )
        traj.records.append(rec)
        return rec

    def keep(t, rho, u):
        traj.states.append(State(PeriodicField(grid, rho), PeriodicField(grid, u, "vector"), t))

    keep(t_c, rho_c, u_c)
    emitted = 0
    try:
        for n in range(nsteps):
            rho_new, u_new, info = _step_arrays(p, sv, rho_c, u_c, t_c, dt, f_ext)
            traj.clip_mass += info.clip_mass
            fm = dg._forcing_at(f_ext, t_c + 0.5 * dt, u_c.shape)
            eres = dg.ledger_term(grid, p, rho_c, u_c, rho_new, u_new, dt, fm)
            t_c = (n + 1) * dt
            rho_c, u_c = rho_new, u_new
            hist.append((t_c, rho_c, u_c, info.fp_iters, eres))
            while emitted < len(hist) - 1:
                rec = emit(emitted)
                emitted += 1
                if not math.isfinite(rec.psi) or rec.psi > psi_max:
                    raise Blowup(rec.t, rec.psi)
            if len(hist) > 3:
                hist.pop(0)
                emitted -= 1
            if (n + 1) % output_every == 0 or n + 1 == nsteps:
                keep(t_c, rho_c, u_c)
        rec = emit(emitted)
        if not math.isfinite(rec.psi) or rec.psi > psi_max:
            raise Blowup(rec.t, rec.psi)
    except ViscoplastError as exc:
        traj.error = f"{type(exc).__name__}: {exc}"
        exc.partial = traj
        exc.t = getattr(exc, "t", t_c)
        raise
    traj.completed = True
    drift = abs(float(grid.integrate(rho_c)) - mass0) / mass0 if mass0 else 0.0
    traj.meta["mass_drift"] = drift
    traj.meta["clip_mass"] = traj.clip_mass
    return traj
