import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from viscoplast import powerlaw as pl
from viscoplast.constitutive import FluidParams
from viscoplast.errors import Blowup, FixedPointDiverged, VacuumFloor
from viscoplast.field import PeriodicField, PeriodicGrid

from oracles import fd_navier_stokes_1d, lambdify_on_grid, symbolic_lame_apply


def vec(g, v):
    return PeriodicField(g, v, "vector")


def random_in_space(space, seed):
    g = space.grid
    v = np.random.default_rng(seed).normal(size=(g.dim,) + g.shape)
    return space.project(v)


# --- Galerkin space and mass matrix -------------------------------------------

def test_space_validation_and_dimension():
    g = PeriodicGrid(2, 16)
    with pytest.raises(ValueError):
        pl.GalerkinSpace(g, 8)
    s = pl.GalerkinSpace(g, 3)
    assert s.dimension == 49


def test_coefficients_orthonormal():
    g = PeriodicGrid(2, 16, length=3.0)
    s = pl.GalerkinSpace(g)
    v = random_in_space(s, 0)
    c = s.coefficients(v)
    assert np.sqrt(np.sum(np.abs(c) ** 2)) == pytest.approx(g.norm2(v), rel=1e-12)
    np.testing.assert_allclose(s.from_coefficients(c), v, atol=1e-13)


@pytest.mark.parametrize("c", [1.0, 2.5])
def test_mass_constant_density(c):
    g = PeriodicGrid(2, 16)
    s = pl.GalerkinSpace(g)
    v = random_in_space(s, 1)
    np.testing.assert_allclose(pl.mass_apply(s, np.full(g.shape, c), v), c * v, atol=1e-13)
    np.testing.assert_allclose(pl.mass_solve(s, np.full(g.shape, c), c * v), v, atol=1e-12)


@settings(max_examples=20)
@given(st.integers(0, 2**31))
def test_mass_rayleigh_and_roundtrip(seed):
    g = PeriodicGrid(1, 32)
    s = pl.GalerkinSpace(g)
    rng = np.random.default_rng(seed)
    rho = 0.5 + 1.5 * rng.random(g.shape)
    for k in range(50):
        v = random_in_space(s, seed + k)
        rq = g.inner(pl.mass_apply(s, rho, v), v) / g.inner(v, v)
        assert rq >= rho.min() - 1e-8
    b = random_in_space(s, seed + 99)
    x = pl.mass_solve(s, rho, b, tol=1e-12)
    assert g.norm2(pl.mass_apply(s, rho, x) - b) <= 1e-12


def test_mass_bilinear_form():
    g = PeriodicGrid(2, 16)
    s = pl.GalerkinSpace(g)
    rho = 1 + 0.5 * np.sin(g.coords()[0])
    v, w = random_in_space(s, 2), random_in_space(s, 3)
    lhs = g.inner(pl.mass_apply(s, rho, v), w)
    assert lhs == pytest.approx(float(g.integrate(rho * np.sum(v * w, axis=0))), rel=1e-12)


def test_mass_vacuum_floor():
    g = PeriodicGrid(1, 16)
    s = pl.GalerkinSpace(g)
    rho = np.ones(16)
    rho[2] = 0.0
    with pytest.raises(VacuumFloor):
        pl.mass_solve(s, rho, random_in_space(s, 4))


# --- momentum right-hand side ----------------------------------------------

def test_rhs_rest_state():
    g = PeriodicGrid(2, 16)
    st_ = pl.State(PeriodicField(g, np.full(g.shape, 1.3)), PeriodicField.zeros(g, "vector"))
    out = pl.momentum_rhs(FluidParams(tau_star=1, q=1.5), st_)
    assert np.max(np.abs(out.values)) <= 1e-13


def test_rhs_forcing_only():
    g = PeriodicGrid(2, 16)
    X, Y = g.coords()
    f = vec(g, np.stack([np.sin(X), np.cos(Y)]))
    st_ = pl.State(PeriodicField(g, np.full(g.shape, 2.0)), PeriodicField.zeros(g, "vector"))
    out = pl.momentum_rhs(FluidParams(), st_, f)
    np.testing.assert_allclose(out.values, 2.0 * f.values, atol=1e-13)


def test_rhs_shear_flow_symbolic():
    # u = (sin y, 0): the convective term vanishes, leaving div S
    Xs, Ys = sp.symbols("x y")
    exprs = [sp.sin(Ys), sp.Integer(0)]
    ref, xs = symbolic_lame_apply(exprs, 1.2, 0.4, 2)
    g = PeriodicGrid(2, 16)
    u = vec(g, lambdify_on_grid(exprs, xs, g.coords()))
    st_ = pl.State(PeriodicField(g, np.ones(g.shape)), u)
    out = pl.momentum_rhs(FluidParams(mu=1.2, lambda_=0.4, tau_star=0), st_)
    np.testing.assert_allclose(out.values, -lambdify_on_grid(ref, xs, g.coords()), atol=1e-12)


# --- stepping ------------------------------------------------------------------

@pytest.mark.parametrize("stress", ["explicit", "implicit"])
def test_equilibrium_is_fixed_point(stress):
    g = PeriodicGrid(1, 32)
    s0 = pl.State(PeriodicField(g, np.full(32, 1.7)), PeriodicField.zeros(g, "vector"))
    s1 = pl.step(FluidParams(tau_star=1, q=1.5), s0, None, 0.01, stress=stress)
    np.testing.assert_allclose(s1.rho.values, s0.rho.values, atol=1e-12)
    assert np.max(np.abs(s1.u.values)) <= 1e-12
    traj = pl.run(FluidParams(), s0.rho, s0.u, T_end=0.05, dt=0.01, stress=stress)
    assert all(np.max(np.abs(s.u.values)) <= 1e-12 for s in traj.states)


def test_picard_iterations_small_dt():
    g = PeriodicGrid(1, 32)
    x = g.coords()[0]
    s0 = pl.State(PeriodicField(g, 1 + 0.1 * np.sin(x)), vec(g, (0.1 * np.sin(x))[None]))
    s1 = pl.step(FluidParams(mu=0.5), s0, None, 1e-4)
    assert s1.info.fp_iters <= 4


def test_newtonian_matches_fd_oracle():
    g = PeriodicGrid(1, 64)
    x = g.coords()[0]
    p = FluidParams(mu=0.5, tau_star=0, a=1, gamma_=1.4)
    rho0 = 1 + 0.2 * np.sin(x)
    u0 = 0.3 * np.sin(x) + 0.1 * np.cos(2 * x)
    traj = pl.run(p, PeriodicField(g, rho0), vec(g, u0[None]), T_end=0.1, dt=1e-3, output_every=100)
    rf, uf = fd_navier_stokes_1d(rho0, u0, 0.5, 1, 1.4, 0.1, 1e-4)
    s = traj.final()
    assert g.norm2(s.u.values[0] - uf) <= 2e-3
    assert g.norm2(s.rho.values - rf) <= 2e-3


def test_explicit_and_implicit_agree():
    g = PeriodicGrid(1, 32)
    x = g.coords()[0]
    p = FluidParams(mu=0.3, tau_star=0.5, delta=0.3, q=1.5)
    rho0 = PeriodicField(g, 1 + 0.2 * np.sin(x))
    u0 = vec(g, (0.3 * np.sin(x))[None])
    a = pl.run(p, rho0, u0, T_end=0.05, dt=1e-3, stress="explicit").final()
    b = pl.run(p, rho0, u0, T_end=0.05, dt=1e-3, stress="implicit").final()
    assert g.norm2(a.u.values - b.u.values) <= 1e-4


def test_smooth_run_energy_decay():
    g = PeriodicGrid(1, 32)
    x = g.coords()[0]
    p = FluidParams(mu=0.3, tau_star=0.5, delta=0.2, q=1.5)
    traj = pl.run(p, PeriodicField(g, 1 + 0.2 * np.sin(x)), vec(g, (0.2 * np.sin(x))[None]),
                  T_end=0.5, dt=5e-3, output_every=20, stress="implicit")
    assert traj.completed
    E = np.array([r.energy for r in traj.records])
    assert np.all(np.diff(E) <= 1e-8 * E[0])
    assert traj.meta["mass_drift"] <= 1e-8
    assert len(traj.states) == 6 and traj.states[-1].t == pytest.approx(0.5)


def test_blowup_guard_keeps_partial_trajectory(tmp_path):
    from viscoplast.cli import write_diagnostics, write_trajectory

    g = PeriodicGrid(1, 32)
    x = g.coords()[0]
    p = FluidParams(mu=0.1)
    with pytest.raises(Blowup) as info:
        pl.run(p, PeriodicField(g, 1 + 0.5 * np.sin(x)), vec(g, (2 * np.sin(x))[None]),
               T_end=0.1, dt=1e-3, psi_max=10.0)
    traj = info.value.partial
    assert traj is not None and not traj.completed and traj.error.startswith("Blowup")
    write_trajectory(tmp_path / "t.csv", traj)
    write_diagnostics(tmp_path / "d.csv", traj)
    data = np.loadtxt(tmp_path / "t.csv", delimiter=",", skiprows=1, ndmin=2)
    assert data.shape == (32 * len(traj.states), 4) and np.all(np.isfinite(data))


def test_picard_divergence_reported():
    g = PeriodicGrid(1, 64)
    x = g.coords()[0]
    p = FluidParams(mu=50.0)
    with pytest.raises(FixedPointDiverged) as info:
        pl.run(p, PeriodicField(g, np.ones(64)), vec(g, (0.1 * np.sin(5 * x))[None]),
               T_end=0.01, dt=0.01, stress="explicit")
    assert info.value.partial is not None


def test_run_validation():
    g = PeriodicGrid(1, 16)
    r = PeriodicField(g, np.ones(16))
    u = PeriodicField.zeros(g, "vector")
    with pytest.raises(ValueError):
        pl.run(FluidParams(), r, u, T_end=0.1, dt=0.03)
    with pytest.raises(ValueError):
        pl.run(FluidParams(), PeriodicField(g, -np.ones(16)), u, T_end=0.1, dt=0.01)
    with pytest.raises(ValueError):
        pl.run(FluidParams(q=0.5), r, u, T_end=0.1, dt=0.01)
