"""Independent reference implementations used only by the tests.

None of these share code paths with the package: finite differences
instead of spectral derivatives, dense per-mode linear algebra instead of
closed forms, sympy instead of numpy where symbolic values are needed.
"""

import numpy as np
import sympy as sp


# --- per-mode Lame solve ----------------------------------------------------

def lame_per_mode(f, mu, lam, length=2 * np.pi):
    """Solve -mu_s Lap u - (lam + mu_s) grad div u = f mode by mode with dense d x d solves.

    ``f`` has shape (d, n, ..., n).  In 1D the operator is -mu u''.
    """
    d = f.shape[0]
    n = f.shape[1]
    if d == 1:
        mu_s, lam_b = mu / 2, 0.0
    else:
        mu_s, lam_b = mu, lam
    fh = np.fft.fftn(f, axes=tuple(range(1, d + 1)))
    k1 = np.fft.fftfreq(n, d=length / n) * 2 * np.pi
    uh = np.zeros_like(fh)
    for idx in np.ndindex(*([n] * d)):
        if any(i == n // 2 for i in idx):
            continue
        k = np.array([k1[i] for i in idx])
        if not np.any(k):
            continue
        A = mu_s * (k @ k) * np.eye(d) + (lam_b + mu_s) * np.outer(k, k)
        uh[(slice(None),) + idx] = np.linalg.solve(A, fh[(slice(None),) + idx])
    return np.fft.ifftn(uh, axes=tuple(range(1, d + 1))).real


# --- explicit finite-difference compressible Navier-Stokes (1D) ----------

def fd_navier_stokes_1d(rho0, u0, mu, a, gamma, T, dt, length=2 * np.pi, force=None):
    """Conservative central differences + classical RK4 for (rho, rho u) in 1D.

    rho_t + (rho u)_x = 0,  (rho u)_t + (rho u^2 + a rho^gamma)_x = mu u_xx + rho f.
    """
    n = rho0.size
    h = length / n
    x = np.arange(n) * h

    def dx(v):
        return (np.roll(v, -1) - np.roll(v, 1)) / (2 * h)

    def dxx(v):
        return (np.roll(v, -1) - 2 * v + np.roll(v, 1)) / h**2

    def rhs(t, y):
        rho, m = y
        u = m / rho
        f = 0.0 if force is None else force(x, t)
        return np.array([-dx(m), -dx(m * u + a * rho**gamma) + mu * dxx(u) + rho * f])

    y = np.array([rho0, rho0 * u0], dtype=float)
    nsteps = int(round(T / dt))
    t = 0.0
    for _ in range(nsteps):
        k1 = rhs(t, y)
        k2 = rhs(t + dt / 2, y + dt / 2 * k1)
        k3 = rhs(t + dt / 2, y + dt / 2 * k2)
        k4 = rhs(t + dt, y + dt * k3)
        y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += dt
    return y[0], y[1] / y[0]


# --- symbolic helpers ----------------------------------------------------

def symbolic_lame_apply(u_exprs, mu, lam, dim):
    """-mu_s Lap u - (lam + mu_s) grad div u for sympy expressions in x, y, z."""
    xs = sp.symbols("x y z")[:dim]
    if dim == 1:
        mu_s, lam_b = sp.Rational(1, 2) * mu, 0
    else:
        mu_s, lam_b = mu, lam
    div = sum(sp.diff(u_exprs[i], xs[i]) for i in range(dim))
    out = []
    for i in range(dim):
        lap = sum(sp.diff(u_exprs[i], xj, 2) for xj in xs)
        out.append(sp.simplify(-mu_s * lap - (lam_b + mu_s) * sp.diff(div, xs[i])))
    return out, xs


def lambdify_on_grid(exprs, xs, coords):
    return np.stack([np.broadcast_to(sp.lambdify(xs, e, "numpy")(*coords), coords[0].shape) for e in exprs])


def monotonicity_gap_quadrature(q, delta, C, D, nodes=64):
    """int_0^1 sum_ijkl d^2 Phi(D + s(C-D))[E, E] ds by Gauss-Legendre, E = C - D."""
    E = C - D
    s, w = np.polynomial.legendre.leggauss(nodes)
    s = 0.5 * (s + 1)
    w = 0.5 * w
    total = 0.0
    for si, wi in zip(s, w):
        A = D + si * E
        B = np.sum(A * A) + delta**2
        total += wi * (B ** ((q - 2) / 2) * np.sum(E * E) + (q - 2) * B ** ((q - 4) / 2) * np.sum(A * E) ** 2)
    return total
