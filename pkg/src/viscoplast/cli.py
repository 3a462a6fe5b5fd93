"""Command line entry point: config parsing, dispatch, run manifests and file output.

Usage::

    viscoplast {elliptic,powerlaw,bingham,verify} [--config PATH] [--out DIR]
               [--seed N] [--quiet]

Configs are JSON.  Data files are CSV with 17 significant digits and are
byte-identical across runs with the same config and seed; timings only go
into ``manifest.json``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import bingham as bg
from . import diagnostics as dg
from .constitutive import FluidParams
from .elliptic import (EllipticProblem, apply_operator, compat_init, compat_rhs, solve,
                       verify_h2, verify_w2p_1d)
from .errors import ConfigError, ViscoplastError
from .field import PeriodicField, PeriodicGrid, mean_zero_project, write_binary
from .powerlaw import GalerkinSpace, run
from .profiles import ProfileError, check_spec, evaluate, evaluate_vector

log = logging.getLogger("viscoplast")

SUBCOMMANDS = ("elliptic", "powerlaw", "bingham", "verify")
CFL_SAFETY = 0.2  # dt default = CFL_SAFETY * h / max(1, max|u0|), rounded to divide T_end

EXIT_OK, EXIT_CONFIG, EXIT_USAGE, EXIT_SOLVER = 0, 1, 2, 3


# --- configuration -----------------------------------------------------------

@dataclass
class GridConfig:
    dim: int = 1
    n: int = 64
    length: float = 2 * math.pi


@dataclass
class TimeConfig:
    dt: float | None = None
    T_end: float = 0.1
    output_every: int = 10


@dataclass
class InitConfig:
    rho0: dict = field(default_factory=lambda: {"profile": "const", "value": 1.0})
    u0: list | None = None
    g: list | None = None
    f_ext: list | None = None
    f: list | None = None
    u_exact: list | None = None


@dataclass
class SolverConfig:
    tol: float = 1e-10
    max_iter: int = 100
    method: str = "newton"
    fp_tol: float = 1e-11
    fp_max: int = 30
    rho_floor: float = 1e-8
    psi_max: float = 1e6
    stress: str = "implicit"
    m: int | None = None
    compat_tol: float = 1e-9
    w2p_exponents: list = field(default_factory=lambda: [2.0, 4.0, 6.0])
    plug_threshold: float | None = None


@dataclass
class ScheduleConfig:
    deltas: list = field(default_factory=lambda: [0.1, 0.05, 0.025, 0.0125])
    warm_start: bool = True


@dataclass
class RunConfig:
    subcommand: str
    params: FluidParams = field(default_factory=FluidParams)
    grid: GridConfig = field(default_factory=GridConfig)
    time: TimeConfig = field(default_factory=TimeConfig)
    init: InitConfig = field(default_factory=InitConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    output: str = "out"
    seed: int = 0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def make_grid(self) -> PeriodicGrid:
        return PeriodicGrid(self.grid.dim, self.grid.n, self.grid.length)


_BLOCKS = {"grid": GridConfig, "time": TimeConfig, "init": InitConfig,
           "solver": SolverConfig, "schedule": ScheduleConfig}


def _block(cls, data, path):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(path, "must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    extra = set(data) - names
    if extra:
        raise ConfigError(f"{path}.{sorted(extra)[0]}", "unknown key")
    return cls(**data)


def _num(v, path, integer=False, positive=False, allow_none=False):
    if v is None and allow_none:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(path, "must be a finite number")
    if integer:
        if int(v) != v:
            raise ConfigError(path, "must be an integer")
        v = int(v)
    else:
        v = float(v)
    if positive and v <= 0:
        raise ConfigError(path, "must be > 0")
    return v


def _params(data) -> FluidParams:
    data = {} if data is None else data
    if not isinstance(data, dict):
        raise ConfigError("params", "must be an object")
    names = {f.name for f in dataclasses.fields(FluidParams)}
    for k in data:
        if k not in names:
            raise ConfigError(f"params.{k}", "unknown key")
        _num(data[k], f"params.{k}")
    merged = {**dataclasses.asdict(FluidParams()), **data}
    if merged["q"] < 1:
        raise ConfigError("params.q", "q must be ≥ 1")
    if merged["mu"] <= 0:
        raise ConfigError("params.mu", "mu must be > 0")
    if 2 * merged["mu"] + merged["lambda_"] <= 0:
        raise ConfigError("params.lambda_",
                          "strong ellipticity requires 2*mu + lambda > 0")
    try:
        return FluidParams(**merged)
    except ValueError as exc:
        raise ConfigError("params", str(exc)) from None


def _rng(seed: int, slot: int) -> np.random.Generator:
    return np.random.default_rng([seed, slot])


_SLOTS = {"rho0": 0, "u0": 1, "g": 2, "f_ext": 3, "f": 4, "u_exact": 5}


def _eval_scalar(cfg: RunConfig, grid, name):
    return PeriodicField(grid, evaluate(getattr(cfg.init, name), grid, _rng(cfg.seed, _SLOTS[name])))


def _eval_vector(cfg: RunConfig, grid, name):
    spec = getattr(cfg.init, name)
    if spec is None:
        return None
    return PeriodicField(grid, evaluate_vector(spec, grid, _rng(cfg.seed, _SLOTS[name])), "vector")


def _default_dt(cfg: RunConfig) -> float:
    grid = cfg.make_grid()
    umax = 1.0
    if cfg.init.u0 is not None:
        umax = max(umax, float(np.max(np.abs(_eval_vector(cfg, grid, "u0").values))))
    raw = CFL_SAFETY * grid.h / umax
    nsteps = max(1, math.ceil(cfg.time.T_end / raw - 1e-9))
    return cfg.time.T_end / nsteps


def from_dict(data: dict) -> RunConfig:
    """Validate a config mapping and fill defaults."""
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    allowed = {f.name for f in dataclasses.fields(RunConfig)}
    for k in data:
        if k not in allowed:
            raise ConfigError(k, "unknown key")
    sub = data.get("subcommand")
    if sub not in SUBCOMMANDS:
        raise ConfigError("subcommand", f"must be one of {list(SUBCOMMANDS)}")
    try:
        blocks = {name: _block(cls, data.get(name), name) for name, cls in _BLOCKS.items()}
    except TypeError as exc:
        raise ConfigError("<root>", str(exc)) from None
    cfg = RunConfig(subcommand=sub, params=_params(data.get("params")), **blocks,
                    output=str(data.get("output", "out")),
                    seed=_num(data.get("seed", 0), "seed", integer=True))
    if cfg.seed < 0:
        raise ConfigError("seed", "must be >= 0")

    g = cfg.grid
    g.dim = _num(g.dim, "grid.dim", integer=True)
    g.n = _num(g.n, "grid.n", integer=True)
    g.length = _num(g.length, "grid.length", positive=True)
    if g.dim not in (1, 2, 3):
        raise ConfigError("grid.dim", "must be 1, 2 or 3")
    if g.n < 8 or g.n % 2:
        raise ConfigError("grid.n", "must be even and >= 8")

    s = cfg.solver
    for name in ("tol", "fp_tol", "rho_floor", "psi_max", "compat_tol"):
        setattr(s, name, _num(getattr(s, name), f"solver.{name}", positive=True))
    for name in ("max_iter", "fp_max"):
        setattr(s, name, _num(getattr(s, name), f"solver.{name}", integer=True, positive=True))
    s.m = _num(s.m, "solver.m", integer=True, positive=True, allow_none=True)
    s.plug_threshold = _num(s.plug_threshold, "solver.plug_threshold", positive=True, allow_none=True)
    if s.method not in ("newton", "frozen"):
        raise ConfigError("solver.method", "must be 'newton' or 'frozen'")
    if s.stress not in ("explicit", "implicit"):
        raise ConfigError("solver.stress", "must be 'explicit' or 'implicit'")
    if not isinstance(s.w2p_exponents, list) or not s.w2p_exponents:
        raise ConfigError("solver.w2p_exponents", "must be a nonempty list")
    s.w2p_exponents = [_num(e, f"solver.w2p_exponents[{i}]") for i, e in enumerate(s.w2p_exponents)]
    if any(not 1 < e < math.inf for e in s.w2p_exponents):
        raise ConfigError("solver.w2p_exponents", "exponents must lie in (1, inf)")

    sc = cfg.schedule
    if not isinstance(sc.deltas, list) or not sc.deltas:
        raise ConfigError("schedule.deltas", "must be a nonempty list")
    sc.deltas = [_num(d, f"schedule.deltas[{i}]", positive=True) for i, d in enumerate(sc.deltas)]
    if any(b >= a for a, b in zip(sc.deltas, sc.deltas[1:])):
        raise ConfigError("schedule.deltas", "must be strictly decreasing")
    if not isinstance(sc.warm_start, bool):
        raise ConfigError("schedule.warm_start", "must be true or false")

    _check_init(cfg)

    t = cfg.time
    t.T_end = _num(t.T_end, "time.T_end", positive=True)
    t.output_every = _num(t.output_every, "time.output_every", integer=True, positive=True)
    if t.dt is None:
        t.dt = _default_dt(cfg)
    t.dt = _num(t.dt, "time.dt", positive=True)
    if cfg.subcommand in ("powerlaw", "bingham"):
        k = t.T_end / t.dt
        if abs(k - round(k)) > 1e-9 * max(1.0, k):
            raise ConfigError("time.dt", "T_end must be an integer multiple of dt")
    return cfg


def _check_init(cfg: RunConfig) -> None:
    it, dim, sub = cfg.init, cfg.grid.dim, cfg.subcommand
    try:
        check_spec(it.rho0, False, dim, "init.rho0")
        for name in ("u0", "g", "f_ext", "f", "u_exact"):
            spec = getattr(it, name)
            if spec is not None:
                check_spec(spec, True, dim, f"init.{name}")
    except ProfileError as exc:
        path, _, reason = str(exc).partition(": ")
        raise ConfigError(path, reason) from None
    if sub == "elliptic" and (it.f is None) == (it.u_exact is None):
        raise ConfigError("init", "elliptic needs exactly one of 'f' or 'u_exact'")
    if sub == "powerlaw" and it.u0 is None and it.g is None:
        raise ConfigError("init", "powerlaw needs 'u0' or 'g'")
    if sub == "bingham":
        if it.g is None:
            raise ConfigError("init.g", "bingham needs the compatibility datum g")
        if dim != 1:
            raise ConfigError("grid.dim", "bingham continuation is one-dimensional")
        if cfg.params.q != 1:
            raise ConfigError("params.q", "bingham continuation uses q = 1")
    if sub in ("powerlaw", "bingham"):
        rho0 = evaluate(it.rho0, cfg.make_grid(), _rng(cfg.seed, _SLOTS["rho0"]))
        if np.min(rho0) < 0:
            raise ConfigError("init.rho0", "density must be nonnegative")


def parse_config(path) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(str(path), "file not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"invalid JSON ({exc})") from None
    return from_dict(data)


def serialize(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True)


# --- output helpers --------------------------------------------------------

def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        return float(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def write_table(path: Path, header, rows) -> None:
    rows = np.asarray(rows, dtype=float).reshape(-1, len(header))
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join("%.17g" % v for v in r) + "\n")


def write_trajectory(path: Path, traj) -> None:
    """Rows ``t, x..., rho, u...`` for every stored state."""
    if not traj.states:
        write_table(path, ["t"], [])
        return
    grid = traj.states[0].rho.grid
    d = grid.dim
    header = ["t"] + ([f"x{i}" for i in range(d)] if d > 1 else ["x"]) + ["rho"] + [f"u{i}" for i in range(d)]
    xs = [c.ravel() for c in grid.coords()]
    blocks = []
    for s in traj.states:
        tcol = np.full(xs[0].size, s.t)
        blocks.append(np.column_stack([tcol] + xs + [s.rho.values.ravel()] + list(s.u.values.reshape(d, -1))))
    write_table(path, header, np.vstack(blocks))


def write_diagnostics(path: Path, traj) -> None:
    write_table(path, list(dg.CSV_COLUMNS), [r.row() for r in traj.records])


# --- subcommands -----------------------------------------------------------

def _run_elliptic(cfg: RunConfig, out: Path, decisions: dict) -> dict:
    grid = cfg.make_grid()
    p = cfg.params
    if cfg.init.u_exact is not None:
        u_ex = mean_zero_project(_eval_vector(cfg, grid, "u_exact"))
        u_ex = PeriodicField(grid, grid.project_nyquist_free(u_ex.values), "vector")
        f = apply_operator(p, u_ex)
    else:
        u_ex = None
        f = _eval_vector(cfg, grid, "f")
    sol = solve(EllipticProblem(p, f), tol=cfg.solver.tol, max_iter=cfg.solver.max_iter,
                method=cfg.solver.method)
    fz = mean_zero_project(f)
    decisions.update({
        "residual_norm": "discrete L2 of the mean- and Nyquist-free residual",
        "f_projection": "mean removed",
        "quadrature": "rectangle rule on the grid",
        "derivatives": "spectral, Nyquist mode zeroed",
    })
    report = {
        "params": p.to_dict(), "n": grid.n, "dim": grid.dim,
        "residual": sol.residual_norm, "newton_iters": sol.newton_iters,
        "method": cfg.solver.method, "w2p_check": None, "h2_check": None,
    }
    if u_ex is not None:
        report["error_vs_exact"] = grid.norm2(sol.u.values - u_ex.values)
    if grid.dim == 1:
        checks = [verify_w2p_1d(p, sol.u, fz, e) for e in cfg.solver.w2p_exponents]
        report["w2p_check"] = {
            "satisfied": all(c["satisfied"] for c in checks),
            "per_exponent": checks,
        }
    else:
        report["h2_check"] = verify_h2(p, sol.u, fz)
    d = grid.dim
    xs = [c.ravel() for c in grid.coords()]
    header = ([f"x{i}" for i in range(d)] if d > 1 else ["x"]) + [f"u{i}" for i in range(d)] + [f"f{i}" for i in range(d)]
    write_table(out / "solution.csv", header,
                np.column_stack(xs + list(sol.u.values.reshape(d, -1)) + list(fz.values.reshape(d, -1))))
    write_json(out / "report.json", report)
    return report


def _initial_velocity(cfg, p, rho0, g, decisions):
    if cfg.init.u0 is not None:
        return _eval_vector(cfg, rho0.grid, "u0")
    rhs = compat_rhs(p, rho0, g)
    tol = cfg.solver.compat_tol * max(rho0.grid.norm2(rhs.values), 1e-300)
    decisions["u0"] = "compatible initial velocity from g"
    decisions["compat_tol_absolute"] = tol
    return compat_init(p, rho0, g, tol=tol, max_iter=cfg.solver.max_iter)


def _run_powerlaw(cfg: RunConfig, out: Path, decisions: dict) -> dict:
    grid = cfg.make_grid()
    p = cfg.params
    rho0 = _eval_scalar(cfg, grid, "rho0")
    g = _eval_vector(cfg, grid, "g")
    f_ext = _eval_vector(cfg, grid, "f_ext")
    u0 = _initial_velocity(cfg, p, rho0, g, decisions)
    space = GalerkinSpace(grid, cfg.solver.m)
    s = cfg.solver
    summary = {"completed": False, "error": None}
    traj = None
    try:
        traj = run(p, rho0, u0, f_ext=f_ext, T_end=cfg.time.T_end, dt=cfg.time.dt,
                   output_every=cfg.time.output_every, space=space, fp_tol=s.fp_tol,
                   fp_max=s.fp_max, rho_floor=s.rho_floor, psi_max=s.psi_max, stress=s.stress,
                   g=g, compat_tol=s.compat_tol)
    except ViscoplastError as exc:
        traj = getattr(exc, "partial", None)
        summary["error"] = f"{type(exc).__name__}: {exc}"
        if traj is None:
            raise
    decisions.update(traj.meta)
    write_trajectory(out / "trajectory.csv", traj)
    write_diagnostics(out / "diagnostics.csv", traj)
    last = traj.final()
    write_binary(last.rho, out / "final_rho.bin")
    write_binary(last.u, out / "final_u.bin")
    recs = traj.records
    summary.update({
        "completed": traj.completed,
        "n_records": len(recs),
        "final_t": recs[-1].t if recs else 0.0,
        "mass_drift": traj.meta.get("mass_drift"),
        "clip_mass": traj.clip_mass,
        "energy_initial": recs[0].energy if recs else None,
        "energy_final": recs[-1].energy if recs else None,
        "max_abs_energy_residual": max((abs(r.energy_residual) for r in recs), default=None),
        "min_j": min((r.j_min for r in recs), default=None),
        "max_psi": max((r.psi for r in recs), default=None),
        "max_fp_iters": max((r.fp_iters for r in recs), default=None),
    })
    write_json(out / "summary.json", summary)
    if summary["error"]:
        raise _Failed(summary["error"])
    return summary


def _run_bingham(cfg: RunConfig, out: Path, decisions: dict) -> dict:
    grid = cfg.make_grid()
    p = cfg.params
    rho0 = _eval_scalar(cfg, grid, "rho0")
    g = _eval_vector(cfg, grid, "g")
    s = cfg.solver
    rc = bg.RunConfig1D(T_end=cfg.time.T_end, dt=cfg.time.dt, m=s.m,
                        f_ext=_eval_vector(cfg, grid, "f_ext"), output_every=cfg.time.output_every,
                        fp_tol=s.fp_tol, fp_max=s.fp_max, rho_floor=s.rho_floor, psi_max=s.psi_max,
                        compat_tol=s.compat_tol, stress=s.stress)
    res = bg.continuation(p, rho0, g, cfg.schedule.deltas, rc, warm_start=cfg.schedule.warm_start,
                          threshold=s.plug_threshold)
    decisions["plug_threshold"] = (s.plug_threshold if s.plug_threshold is not None
                                   else "max(10 delta, 1e-4 max|u_x|) per leg")
    decisions["legs"] = []
    for i, leg in enumerate(res.legs):
        if leg.trajectory is not None:
            write_trajectory(out / f"leg_{i}_trajectory.csv", leg.trajectory)
            write_diagnostics(out / f"leg_{i}_diagnostics.csv", leg.trajectory)
        decisions["legs"].append({
            "delta": leg.delta,
            "meta": leg.trajectory.meta if leg.trajectory is not None else None,
            "threshold": res.yield_reports[i]["threshold"] if res.yield_reports[i] else None,
        })
    summary = {"legs": res.summary(), "cauchy_gaps": res.cauchy_gaps,
               "warm_start": cfg.schedule.warm_start}
    write_json(out / "summary.json", summary)
    failed = [leg.error for leg in res.legs if not leg.ok]
    if failed:
        raise _Failed(failed[0] or "leg did not complete")
    return summary


def _run_verify(cfg: RunConfig, out: Path, decisions: dict, quiet: bool) -> dict:
    from .verify import format_table, run_suite

    rows = run_suite(seed=cfg.seed)
    if not quiet:
        print(format_table(rows))
    summary = {"checks": [{"name": n, "passed": ok, "detail": d} for n, ok, d in rows],
               "all_passed": all(ok for _, ok, _ in rows)}
    write_json(out / "verify.json", summary)
    if not summary["all_passed"]:
        raise _Failed("property suite reported failures")
    return summary


class _Failed(Exception):
    """Run produced artifacts but did not succeed."""


def dispatch(cfg: RunConfig, out: Path | None = None, quiet: bool = False) -> int:
    out = Path(out if out is not None else cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    decisions: dict = {"cfl_safety_default_dt": CFL_SAFETY}
    manifest = {
        "config": cfg.to_dict(),
        "versions": {"viscoplast": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__, "python": platform.python_version()},
        "decisions": decisions,
    }
    t0 = time.perf_counter()
    status = EXIT_OK
    try:
        if cfg.subcommand == "elliptic":
            _run_elliptic(cfg, out, decisions)
        elif cfg.subcommand == "powerlaw":
            _run_powerlaw(cfg, out, decisions)
        elif cfg.subcommand == "bingham":
            _run_bingham(cfg, out, decisions)
        else:
            _run_verify(cfg, out, decisions, quiet)
        manifest["status"] = "ok"
    except (_Failed, ViscoplastError) as exc:
        # _Failed already carries "ErrorClass: message"
        msg = f"{type(exc).__name__}: {exc}" if isinstance(exc, ViscoplastError) else str(exc)
        manifest["status"] = msg
        print(f"error: {msg}", file=sys.stderr)
        status = EXIT_SOLVER
    manifest["timings"] = {"wall_seconds": time.perf_counter() - t0}
    manifest["exit_code"] = status
    write_json(out / "manifest.json", manifest)
    return status


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="viscoplast",
                                 description="Regularized power-law and Bingham fluid solvers.")
    sub = ap.add_subparsers(dest="subcommand", metavar="{" + ",".join(SUBCOMMANDS) + "}")
    sub.required = True
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON run config" + ("" if name == "verify" else " (required)"),
                        required=name != "verify")
        sp.add_argument("--out", help="output directory (overrides the config)")
        sp.add_argument("--seed", type=int, help="seed for randomized profiles and checks")
        sp.add_argument("--quiet", action="store_true", help="only log warnings and errors")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config is None:
            data = {"subcommand": args.subcommand}
        else:
            path = Path(args.config)
            try:
                data = json.loads(path.read_text())
            except FileNotFoundError:
                raise ConfigError(str(path), "file not found") from None
            except json.JSONDecodeError as exc:
                raise ConfigError(str(path), f"invalid JSON ({exc})") from None
            if not isinstance(data, dict):
                raise ConfigError("<root>", "config must be a JSON object")
            data.setdefault("subcommand", args.subcommand)
            if data["subcommand"] != args.subcommand:
                raise ConfigError("subcommand", f"config is for {data['subcommand']!r}, "
                                                f"invoked as {args.subcommand!r}")
        if args.seed is not None:
            data["seed"] = args.seed
        cfg = from_dict(data)
    except ConfigError as exc:
        print(f"error: ConfigError: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return dispatch(cfg, args.out, args.quiet)


if __name__ == "__main__":
    sys.exit(main())
