"""delta-continuation towards the 1D Bingham limit, plug detection, yield checks."""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import constitutive as cst
from .constitutive import FluidParams
from .elliptic import compat_init, compat_rhs, verify_w2p_1d
from .errors import Blowup, FixedPointDiverged, NonConvergence, VacuumFloor, MassLoss
from .field import PeriodicField
from .powerlaw import GalerkinSpace, Trajectory, run

log = logging.getLogger(__name__)

__all__ = [
    "PlugRegion",
    "RunConfig1D",
    "LegResult",
    "ContinuationResult",
    "continuation",
    "default_threshold",
    "detect_plugs",
    "verify_yield",
    "regularized_stress_1d",
]


@dataclass
class PlugRegion:
    """Maximal runs of grid nodes with ``|u_x| < threshold``.

    ``intervals`` holds ``(x_lo, x_hi)`` node coordinates, sorted by ``x_lo``;
    a run that wraps through ``x = 0`` has ``x_hi < x_lo``.  ``mask`` marks the
    member nodes.
    """

    intervals: list
    threshold: float
    mask: np.ndarray

    def __bool__(self):
        return bool(self.intervals)

    def covered_fraction(self) -> float:
        return float(np.mean(self.mask))


def _strain_1d(u: PeriodicField):
    v = u.values[0] if u.values.ndim == 2 else u.values
    return u.grid.diff(v, 0)


def default_threshold(u: PeriodicField, delta_final: float) -> float:
    """``max(10 delta, 1e-4 max|u_x|)``."""
    s = _strain_1d(u)
    return max(10.0 * delta_final, 1e-4 * float(np.max(np.abs(s))))


def detect_plugs(u: PeriodicField, threshold: float) -> PlugRegion:
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    if u.grid.dim != 1:
        raise ValueError("plug detection is one-dimensional")
    s = _strain_1d(u)
    mask = np.abs(s) < threshold
    x = u.grid.x1d
    n = mask.size
    if mask.all():
        return PlugRegion([(float(x[0]), float(x[-1]))], threshold, mask)
    if not mask.any():
        return PlugRegion([], threshold, mask)
    # rotate so that index 0 is outside a plug, then scan runs
    start = int(np.argmin(mask))
    rolled = np.roll(mask, -start)
    runs = []
    i = 0
    while i < n:
        if rolled[i]:
            j = i
            while j + 1 < n and rolled[j + 1]:
                j += 1
            runs.append(((i + start) % n, (j + start) % n))
            i = j + 1
        else:
            i += 1
    runs.sort()
    return PlugRegion([(float(x[a]), float(x[b])) for a, b in runs], threshold, mask)


def regularized_stress_1d(p: FluidParams, s, delta: float):
    """``mu s + tau* s / sqrt(s^2 + delta^2)``."""
    s = np.asarray(s, dtype=float)
    if delta == 0 and np.any(s == 0):
        raise cst.SingularEvaluation("regularized stress at delta = 0 and s = 0")
    return p.mu * s + p.tau_star * s / np.sqrt(s * s + delta * delta)


def verify_yield(p: FluidParams, u: PeriodicField, delta_final: float, plugs: PlugRegion) -> dict:
    """Plug stress excess and flow-law residual of the regularized stress."""
    s = _strain_1d(u)
    S = regularized_stress_1d(p, s, delta_final)
    inside = plugs.mask
    outside = ~inside
    excess = float(np.max(np.maximum(np.abs(S[inside]) - p.tau_star, 0.0))) if inside.any() else 0.0
    if outside.any():
        so = s[outside]
        limit = p.mu * so + p.tau_star * np.sign(so)
        resid = float(np.max(np.abs(S[outside] - limit)))
        smin = float(np.min(np.abs(so)))
        bound = p.tau_star * delta_final**2 / (2 * smin**2)
    else:
        resid, smin, bound = 0.0, math.inf, 0.0
    return {
        "delta": delta_final,
        "threshold": plugs.threshold,
        "max_plug_stress_excess": excess,
        "max_flow_law_residual": resid,
        "min_flow_strain": smin,
        "flow_law_bound": bound,
        "plug_intervals": list(plugs.intervals),
        "plug_fraction": plugs.covered_fraction(),
    }


@dataclass
class RunConfig1D:
    """Time-integration settings applied to every continuation leg."""

    T_end: float = 0.1
    dt: float = 1e-3
    m: int | None = None
    f_ext: object = None
    output_every: int = 10
    fp_tol: float = 1e-11
    fp_max: int = 30
    rho_floor: float = 1e-8
    psi_max: float = 1e6
    compat_tol: float = 1e-9  # relative to ||rhs||; the absolute floor grows like tau*/delta
    stress: str = "implicit"


@dataclass
class LegResult:
    delta: float
    u0: PeriodicField | None = None
    trajectory: Trajectory | None = None
    error: str | None = None
    w2p: dict | None = None

    @property
    def ok(self) -> bool:
        return self.error is None and self.trajectory is not None and self.trajectory.completed


@dataclass
class ContinuationResult:
    deltas: list
    states: list
    cauchy_gaps: list
    yield_reports: list
    legs: list = dc_field(default_factory=list)

    def summary(self) -> list:
        out = []
        for i, (d, yr) in enumerate(zip(self.deltas, self.yield_reports)):
            out.append({
                "delta": d,
                "ok": self.legs[i].ok,
                "error": self.legs[i].error,
                "cauchy_gap": self.cauchy_gaps[i - 1] if i > 0 else None,
                "plug_intervals": yr["plug_intervals"] if yr else None,
                "plug_stress_excess": yr["max_plug_stress_excess"] if yr else None,
                "flow_law_residual": yr["max_flow_law_residual"] if yr else None,
                "flow_law_bound": yr["flow_law_bound"] if yr else None,
            })
        return out


_LEG_ERRORS = (Blowup, FixedPointDiverged, NonConvergence, VacuumFloor, MassLoss)


def _run_leg(p_base, delta, rho0, g, cfg: RunConfig1D, u_guess):
    p = p_base.replace(delta=delta)
    leg = LegResult(delta)
    try:
        rhs = compat_rhs(p, rho0, g)
        tol = cfg.compat_tol * max(rho0.grid.norm2(rhs.values), 1e-300)
        u0 = compat_init(p, rho0, g, tol=tol, u_init=u_guess)
        leg.u0 = u0
        leg.w2p = verify_w2p_1d(p, u0, rhs, 2.0)
        space = GalerkinSpace(rho0.grid, cfg.m)
        leg.trajectory = run(p, rho0, u0, f_ext=cfg.f_ext, T_end=cfg.T_end, dt=cfg.dt,
                             output_every=cfg.output_every, space=space, fp_tol=cfg.fp_tol,
                             fp_max=cfg.fp_max, rho_floor=cfg.rho_floor, psi_max=cfg.psi_max,
                             stress=cfg.stress, g=g,
                             compat_tol=10 * tol)
    except _LEG_ERRORS as exc:
        leg.error = f"{type(exc).__name__}: {exc}"
        partial = getattr(exc, "partial", None)
        if partial is not None:
            leg.trajectory = partial
        log.warning("continuation leg delta=%g failed: %s", delta, leg.error)
    return leg


def _threads(n_legs: int) -> int:
    env = os.environ.get("VISCOPLAST_THREADS")
    cap = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(cap, n_legs))


def continuation(p_base: FluidParams, rho0: PeriodicField, g: PeriodicField, schedule,
                 run_cfg: RunConfig1D | None = None, warm_start: bool = True,
                 threshold: float | None = None) -> ContinuationResult:
    """Solve the regularized 1D Bingham problem for each delta in ``schedule``.

    Each leg starts from the compatible initial velocity for its own delta.
    With ``warm_start`` the Newton solve producing it starts from the previous
    leg's initial velocity and legs run in order; otherwise legs are
    independent and run concurrently (bounded by ``VISCOPLAST_THREADS``).
    Failed legs are recorded, not fatal.
    """
    if rho0.grid.dim != 1:
        raise ValueError("continuation is one-dimensional")
    if p_base.q != 1:
        raise ValueError("the Bingham regularization uses q = 1")
    p_base.check_admissible()
    deltas = [float(d) for d in schedule]
    if not deltas or any(d <= 0 for d in deltas) or any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise ValueError("schedule must be strictly decreasing and positive")
    cfg = run_cfg or RunConfig1D()

    if warm_start:
        legs = []
        guess = None
        for d in deltas:
            leg = _run_leg(p_base, d, rho0, g, cfg, guess)
            if leg.u0 is not None:
                guess = leg.u0
            legs.append(leg)
    else:
        with ThreadPoolExecutor(max_workers=_threads(len(deltas))) as ex:
            legs = list(ex.map(lambda d: _run_leg(p_base, d, rho0, g, cfg, None), deltas))

    grid = rho0.grid
    states = [leg.trajectory.final() if leg.ok else None for leg in legs]
    gaps = []
    for a, b in zip(states, states[1:]):
        gaps.append(grid.norm2(a.u.values - b.u.values) if a is not None and b is not None else math.nan)
    reports = []
    for d, st in zip(deltas, states):
        if st is None:
            reports.append(None)
            continue
        thr = threshold if threshold is not None else default_threshold(st.u, d)
        plugs = detect_plugs(st.u, thr)
        reports.append(verify_yield(p_base.replace(delta=d), st.u, d, plugs))
    return ContinuationResult(deltas, states, gaps, reports, legs)
