import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from viscoplast import diagnostics as dg
from viscoplast.constitutive import FluidParams
from viscoplast.errors import GridMismatch
from viscoplast.field import PeriodicField, PeriodicGrid
from viscoplast.powerlaw import State, run


def vec(g, v):
    return PeriodicField(g, v, "vector")


def state(g, rho, u, t=0.0):
    return State(PeriodicField(g, rho), vec(g, u), t)


def test_psi_rest_state():
    g = PeriodicGrid(1, 32)
    s = state(g, np.ones(32), np.zeros((1, 32)))
    val = dg.psi(s, np.zeros((1, 32)), FluidParams(a=1, gamma_=2))
    assert val == pytest.approx(1 + (2 * math.pi) ** (1 / 6), rel=1e-14)


def test_psi_gradient_term_scales_quadratically():
    g = PeriodicGrid(2, 16)
    X, Y = g.coords()
    rho = 1 + 0.2 * np.sin(X)
    u = np.stack([np.sin(Y), np.cos(X + Y)])
    ut = np.zeros_like(u)
    p = FluidParams()
    G = g.grad(u)
    grad2 = g.inner(G, G)
    d = dg.psi(state(g, rho, 2 * u), ut, p) - dg.psi(state(g, rho, u), ut, p)
    assert d == pytest.approx(3 * grad2, rel=1e-12)


def _psi_offline(rho, u, ut, a, gamma):
    # independent: numpy FFT derivatives on a 1D 2pi grid, rectangle-rule sums
    n = rho.size
    h = 2 * math.pi / n
    k = np.fft.fftfreq(n, 1.0 / n)
    k[n // 2] = 0

    def dx(v):
        return np.fft.ifft(1j * k * np.fft.fft(v)).real

    P = a * rho**gamma
    w16 = (np.sum(P**6) * h + np.sum(dx(P) ** 6) * h) ** (1 / 6)
    return 1 + np.sum(dx(u) ** 2) * h + np.sum(rho * ut**2) * h + w16


def test_psi_matches_offline_recomputation():
    g = PeriodicGrid(1, 32)
    x = g.coords()[0]
    p = FluidParams(mu=0.4, tau_star=0.3, delta=0.3, q=1.5, a=1.2, gamma_=1.4)
    traj = run(p, PeriodicField(g, 1 + 0.2 * np.sin(x)), vec(g, (0.3 * np.sin(x))[None]),
               T_end=0.05, dt=5e-3, output_every=1, stress="implicit")
    uts = dg.time_derivative(traj.states)
    for s, ut, rec in zip(traj.states, uts, traj.records):
        ref = _psi_offline(s.rho.values, s.u.values[0], ut[0], p.a, p.gamma_)
        assert rec.psi == pytest.approx(ref, rel=1e-8)
        assert rec.t == pytest.approx(s.t)


def test_dissipation_newtonian_1d():
    g = PeriodicGrid(1, 64)
    x = g.coords()[0]
    assert dg.dissipation(vec(g, np.sin(x)[None]), FluidParams(mu=1.5)) == pytest.approx(1.5 * math.pi, rel=1e-12)


def test_dissipation_equals_stress_power():
    from viscoplast import constitutive as cst

    g = PeriodicGrid(2, 16)
    X, Y = g.coords()
    u = np.stack([np.sin(Y) * np.cos(X), 0.5 * np.cos(2 * X)])
    p = FluidParams(mu=1.1, lambda_=0.4, tau_star=0.8, delta=0.2, q=1.3)
    D = cst.rate_of_strain(g.grad(u))
    power = float(g.integrate(np.sum(cst.stress_delta(p, D) * D, axis=(0, 1))))
    assert dg.dissipation(vec(g, u), p) == pytest.approx(power, rel=1e-10)


def test_ledger_rest_state():
    g = PeriodicGrid(1, 16)
    states = [state(g, np.full(16, 1.2), np.zeros((1, 16)), t) for t in (0, 0.1, 0.2)]
    assert np.max(np.abs(dg.energy_ledger(states, FluidParams()))) <= 1e-14


def test_ledger_requires_uniform_step():
    g = PeriodicGrid(1, 16)
    states = [state(g, np.ones(16), np.zeros((1, 16)), t) for t in (0, 0.1, 0.3)]
    with pytest.raises(ValueError):
        dg.energy_ledger(states, FluidParams())


def _ledger_sum(p, dt, f=None):
    g = PeriodicGrid(1, 32)
    x = g.coords()[0]
    traj = run(p, PeriodicField(g, 1 + 0.2 * np.sin(x)), vec(g, (0.4 * np.sin(x))[None]), f_ext=f,
               T_end=0.2, dt=dt, stress="implicit")
    return np.sum(np.abs([r.energy_residual for r in traj.records])), traj


@pytest.mark.parametrize("forced", [False, True])
def test_ledger_second_order(forced):
    g = PeriodicGrid(1, 32)
    x = g.coords()[0]
    p = FluidParams(mu=0.3, tau_star=0.3, delta=0.3, q=1.5)
    f = vec(g, (0.5 * np.sin(x))[None]) if forced else None
    sums = [_ledger_sum(p, dt, f)[0] for dt in (8e-3, 4e-3, 2e-3)]
    orders = [math.log2(sums[i] / sums[i + 1]) for i in range(2)]
    assert min(orders) >= 1.8


def test_ledger_matches_records():
    p = FluidParams(mu=0.3, tau_star=0.3, delta=0.3, q=1.5)
    g = PeriodicGrid(1, 32)
    x = g.coords()[0]
    traj = run(p, PeriodicField(g, 1 + 0.2 * np.sin(x)), vec(g, (0.4 * np.sin(x))[None]),
               T_end=0.05, dt=5e-3, stress="implicit", output_every=1)
    led = dg.energy_ledger(traj.states, p)
    np.testing.assert_allclose(led, [r.energy_residual for r in traj.records[1:]], rtol=1e-12, atol=1e-16)


def test_j_min_cases():
    g = PeriodicGrid(2, 16)
    X, Y = g.coords()
    u = np.stack([np.sin(Y), np.cos(X)])
    s = state(g, np.ones(g.shape), u)
    p = FluidParams(q=1.5, delta=0.2)
    assert dg.j_integrand_min(s, np.zeros_like(u), p) == 0.0
    from viscoplast import constitutive as cst

    ut = np.stack([np.cos(X + Y), np.sin(2 * X)])
    p1 = FluidParams(q=1, delta=0.2)
    D = cst.rate_of_strain(g.grad(u))
    E = cst.rate_of_strain(g.grad(ut))
    B = cst.frobenius_sq(D) + 0.04
    ref = np.min(B ** (-1.5) * 0.04 * cst.frobenius_sq(E))
    assert dg.j_integrand_min(s, ut, p1) == pytest.approx(ref, rel=1e-12)


@settings(max_examples=40)
@given(st.integers(0, 2**31), st.sampled_from([1.0, 1.5, 2.0, 3.0]))
def test_j_min_random_nonnegative(seed, q):
    g = PeriodicGrid(2, 8)
    rng = np.random.default_rng(seed)
    s = state(g, np.ones(g.shape), rng.normal(size=(2, 8, 8)))
    assert dg.j_integrand_min(s, rng.normal(size=(2, 8, 8)), FluidParams(q=q, delta=0.1)) >= -1e-12


def test_uniqueness_distance_cases():
    g = PeriodicGrid(1, 32)
    x = g.coords()[0]
    rho = 1 + 0.3 * np.cos(x)
    u = np.sin(x)[None]
    v = (0.1 * np.cos(2 * x))[None]
    p = FluidParams(a=1, gamma_=1.4)
    s = state(g, rho, u)
    assert dg.uniqueness_distance(s, s, p) == 0.0
    d = dg.uniqueness_distance(s, state(g, rho, u + v), p)
    assert d == pytest.approx(float(g.integrate(rho * v[0] ** 2)), rel=1e-14)
    with pytest.raises(GridMismatch):
        dg.uniqueness_distance(s, state(PeriodicGrid(1, 16), np.ones(16), np.zeros((1, 16))), p)


@settings(max_examples=30)
@given(st.integers(0, 2**31))
def test_uniqueness_distance_symmetric_for_equal_density(seed):
    g = PeriodicGrid(1, 16)
    rng = np.random.default_rng(seed)
    rho = 0.5 + rng.random(16)
    a, b = state(g, rho, rng.normal(size=(1, 16))), state(g, rho, rng.normal(size=(1, 16)))
    p = FluidParams()
    assert dg.uniqueness_distance(a, b, p) == pytest.approx(dg.uniqueness_distance(b, a, p), rel=1e-14)
    assert dg.uniqueness_distance(a, b, p) > 0


def test_gronwall_hats_structure():
    g = PeriodicGrid(1, 32)
    x = g.coords()[0]
    p = FluidParams(mu=0.5)
    kw = dict(T_end=0.05, dt=5e-3, output_every=1)
    t1 = run(p, PeriodicField(g, 1 + 0.1 * np.sin(x)), vec(g, (0.2 * np.sin(x))[None]), **kw)
    t2 = run(p, PeriodicField(g, 1 + 0.1 * np.sin(x)), vec(g, (0.2 * np.sin(x) + 1e-3 * np.cos(x))[None]), **kw)
    h = dg.gronwall_hats(t1.states, t2.states, p)
    assert np.all(h["rate_12"] >= 3) and np.all(h["rate_21"] >= 3)
    assert np.all(np.diff(h["cumulative"]) >= 0)
    assert h["exponent"] == max(h["exponent_12"], h["exponent_21"])
    with pytest.raises(ValueError):
        dg.gronwall_hats(t1.states, t2.states[:-1], p)


def test_csv_columns():
    assert dg.CSV_COLUMNS == ("t", "mass", "energy", "dissipation", "psi", "j_min", "fp_iters", "energy_residual")
