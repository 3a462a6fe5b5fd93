import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from viscoplast import transport as tr
from viscoplast.constitutive import FluidParams
from viscoplast.errors import CFLViolation, MassLoss
from viscoplast.field import PeriodicField, PeriodicGrid


def bump(x, c=math.pi, w=3.0):
    return 1 + np.exp(-w * (1 - np.cos(x - c)))


def test_rest_keeps_density():
    g = PeriodicGrid(1, 32)
    rho = PeriodicField(g, bump(g.coords()[0]))
    out = tr.advance_density(rho, PeriodicField.zeros(g, "vector"), 0.1)
    np.testing.assert_array_equal(out.values, rho.values)


def test_constant_velocity_translates():
    g = PeriodicGrid(1, 64)
    x = g.coords()[0]
    c = 0.7
    T = 0.5
    errs = []
    for nsteps in (25, 50, 100):
        rho = PeriodicField(g, bump(x))
        u = PeriodicField(g, np.full((1, 64), c), "vector")
        dt = T / nsteps
        for _ in range(nsteps):
            rho = tr.advance_density(rho, u, dt)
        errs.append(np.max(np.abs(rho.values - bump(x - c * T))))
    rates = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert all(r > 1.8 for r in rates)


@settings(max_examples=30)
@given(st.integers(0, 2**31), st.sampled_from([1, 2, 3]))
def test_mass_conserved(seed, d):
    g = PeriodicGrid(d, 8 if d == 3 else 16)
    rng = np.random.default_rng(seed)
    rho = PeriodicField(g, 1 + 0.3 * rng.random(g.shape))
    u = PeriodicField(g, rng.normal(size=(d,) + g.shape), "vector")
    dt = tr.cfl_limit(g, u)
    out = tr.advance_density(rho, u, dt)
    assert abs(out.integral() - rho.integral()) <= 1e-12 * rho.integral()


def test_cfl_violation():
    g = PeriodicGrid(1, 32)
    u = PeriodicField(g, np.ones((1, 32)), "vector")
    with pytest.raises(CFLViolation):
        tr.advance_density(PeriodicField(g, np.ones(32)), u, 2 * tr.cfl_limit(g, u))
    assert tr.cfl_limit(g, PeriodicField.zeros(g, "vector")) == math.inf


def test_clip_density_policy():
    g = PeriodicGrid(1, 16)
    rho = np.ones(16)
    rho[3] = -1e-12
    out, clipped = tr.clip_density(g, rho)
    assert out.min() >= 0 and clipped > 0
    assert g.integrate(out) == pytest.approx(g.integrate(rho), rel=1e-15)
    rho[3] = -0.5
    with pytest.raises(MassLoss):
        tr.clip_density(g, rho)
    same, zero = tr.clip_density(g, np.ones(16))
    assert zero == 0.0


def _run_path(g, rho0, u, dt, nsteps):
    snaps, times = [rho0], [0.0]
    rho = rho0
    for k in range(nsteps):
        rho = tr.advance_density(rho, u, dt)
        snaps.append(rho)
        times.append((k + 1) * dt)
    return tr.DensityPath(snaps, np.array(times))


def test_bounds_rest_and_divergence_free():
    g = PeriodicGrid(2, 16)
    X, Y = g.coords()
    rho0 = PeriodicField(g, 1 + 0.2 * np.sin(X))
    z = PeriodicField.zeros(g, "vector")
    path = _run_path(g, rho0, z, 0.01, 5)
    rep = tr.density_bounds_check(path, [z] * 6, rho0)
    assert rep["max_violation"] == 0
    np.testing.assert_allclose(rep["lower"], rho0.values.min())
    const = PeriodicField(g, np.full(g.shape, 2.0))
    shear = PeriodicField(g, np.stack([np.sin(Y), np.cos(X)]), "vector")
    path = _run_path(g, const, shear, 0.05, 10)
    rep = tr.density_bounds_check(path, [shear] * 11, const)
    assert rep["max_violation"] <= 1e-12
    assert path.check()["ok"]


def test_bounds_compressive_flow():
    g = PeriodicGrid(1, 128)
    x = g.coords()[0]
    rho0 = PeriodicField(g, 1 + 0.3 * np.cos(x))
    u = PeriodicField(g, (0.5 * np.sin(x))[None], "vector")
    path = _run_path(g, rho0, u, 0.01, 50)
    rep = tr.density_bounds_check(path, [u] * 51, rho0)
    assert rep["max_violation"] <= 1e-3


def test_pressure_residual_rest():
    g = PeriodicGrid(1, 32)
    rho0 = PeriodicField(g, bump(g.coords()[0]))
    z = PeriodicField.zeros(g, "vector")
    path = _run_path(g, rho0, z, 0.01, 4)
    assert np.max(tr.pressure_residual(FluidParams(gamma_=1.4), path, [z] * 5)) <= 1e-12


def test_pressure_residual_converges():
    g = PeriodicGrid(1, 64)
    x = g.coords()[0]
    u = PeriodicField(g, (0.4 * np.sin(x))[None], "vector")
    rho0 = PeriodicField(g, 1 + 0.2 * np.cos(x))
    res = []
    for dt in (0.02, 0.01, 0.005):
        n = int(round(0.2 / dt))
        path = _run_path(g, rho0, u, dt, n)
        res.append(tr.pressure_residual(FluidParams(gamma_=1.4), path, [u] * (n + 1))[n // 2])
    rates = [math.log2(res[i] / res[i + 1]) for i in range(2)]
    assert all(r > 1.8 for r in rates)


def test_semi_lagrangian_agrees_with_production():
    g = PeriodicGrid(1, 32)
    x = g.coords()[0]
    rho = PeriodicField(g, bump(x))
    u = PeriodicField(g, (0.3 * np.sin(x) + 0.2)[None], "vector")
    a, b = rho, rho
    for _ in range(20):
        a = tr.advance_density(a, u, 0.01)
        b = tr.semi_lagrangian_step(b, u, 0.01)
    assert np.max(np.abs(a.values - b.values)) < 1e-4


def test_trig_interpolate_reproduces_nodes_and_modes():
    g = PeriodicGrid(2, 8)
    X, Y = g.coords()
    f = np.sin(X) * np.cos(2 * Y) + np.cos(4 * X)
    pts = np.stack([X.ravel(), Y.ravel()])
    np.testing.assert_allclose(tr.trig_interpolate(g, f, pts), f.ravel(), atol=1e-13)
    off = np.array([[0.3, 1.1], [2.0, 0.7]])
    np.testing.assert_allclose(tr.trig_interpolate(g, np.sin(X) * np.cos(2 * Y), off),
                               np.sin(off[0]) * np.cos(2 * off[1]), atol=1e-13)


def test_density_path_validation():
    g = PeriodicGrid(1, 8)
    r = PeriodicField(g, np.ones(8))
    with pytest.raises(ValueError):
        tr.DensityPath([r, r], np.array([0.0, 0.0]))
    with pytest.raises(ValueError):
        tr.DensityPath([r], np.array([0.0, 1.0]))
