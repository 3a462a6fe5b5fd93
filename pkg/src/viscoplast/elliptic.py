"""Nonlinear elliptic solver for ``-div S_delta(D(u)) = f`` on the torus.

The operator is the gradient of the convex energy

    Phi(u) = int W(D(u)) - f.u,   W(D) = mu|D|^2 + lambda/2 tr(D)^2 + tau*/q B^(q/2),

so its exact Jacobian (:func:`apply_jacobian`) is symmetric positive definite
on mean-zero fields.  :func:`solve` runs Newton with preconditioned CG on that
Jacobian and a backtracking line search on ``Phi``.  The frozen quasi-linear
operator ``A(u*, D)`` is available as :func:`apply_linearized` and drives the
alternative ``method="frozen"`` iteration (GMRES).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg, gmres

from . import constitutive as cst
from .constitutive import FluidParams
from .errors import NonConvergence
from .field import PeriodicField, PeriodicGrid, mean_zero_project

__all__ = [
    "EllipticProblem",
    "EllipticSolution",
    "apply_operator",
    "apply_linearized",
    "apply_jacobian",
    "energy",
    "solve",
    "verify_w2p_1d",
    "verify_h2",
    "compat_init",
    "lame_solve",
]


def _arr(u):
    return u.values if isinstance(u, PeriodicField) else np.asarray(u, dtype=float)


def _vec(grid, values):
    return PeriodicField(grid, values, "vector")


def strain(grid: PeriodicGrid, u):
    return cst.rate_of_strain(grid.grad(u))


def _operator(p: FluidParams, grid: PeriodicGrid, u):
    return -grid.div(cst.stress_delta(p, strain(grid, u)))


def _jacobian(p, grid, Du, v):
    return -grid.div(cst.stress_tangent(p, Du, strain(grid, v)))


def _energy_density(p: FluidParams, D):
    d = D.shape[0]
    mu_s, lam = cst._lame(p, d)
    tr = np.trace(D, axis1=0, axis2=1)
    w = mu_s * cst.frobenius_sq(D) + 0.5 * lam * tr**2
    if p.tau_star > 0:
        B = cst.frobenius_sq(D) + p.delta**2
        w = w + p.tau_star / p.q * B ** (0.5 * p.q)
    return w


def apply_operator(p: FluidParams, u) -> PeriodicField:
    """``-div S_delta(D(u))`` with spectral derivatives."""
    grid = u.grid
    return _vec(grid, _operator(p, grid, u.values))


def apply_linearized(p: FluidParams, u_star: PeriodicField, v: PeriodicField) -> PeriodicField:
    """Frozen quasi-linear operator ``sum_jkl a_ij^kl(D(u*)) d_k d_l v_j``.

    With ``v = u*`` this equals ``div S_delta(D(u*))``.  It is not the
    derivative of :func:`apply_operator`; that is :func:`apply_jacobian`.
    """
    grid = u_star.grid
    a = cst.stress_jacobian(p, strain(grid, u_star.values))
    return _vec(grid, _frozen_apply(grid, a, v.values))


def _frozen_apply(grid, a, v):
    d = grid.dim
    H = np.empty((d, d, d) + grid.shape)
    for k in range(d):
        dk = grid.diff(v, k)
        for l in range(k, d):
            H[:, k, l] = grid.diff(dk, l)
            H[:, l, k] = H[:, k, l]
    return np.einsum("ijkl...,jkl...->i...", a, H)


def apply_jacobian(p: FluidParams, u: PeriodicField, v: PeriodicField) -> PeriodicField:
    """Exact directional derivative of :func:`apply_operator` at ``u`` along ``v``."""
    grid = u.grid
    return _vec(grid, _jacobian(p, grid, strain(grid, u.values), v.values))


def energy(p: FluidParams, u: PeriodicField, f: PeriodicField) -> float:
    """``Phi(u) = int W(D(u)) - f.u``, whose gradient is ``apply_operator(u) - f``."""
    grid = u.grid
    return float(grid.integrate(_energy_density(p, strain(grid, u.values)))) - grid.inner(f.values, u.values)


@dataclass
class EllipticProblem:
    params: FluidParams
    f: PeriodicField
    grid: PeriodicGrid | None = None

    def __post_init__(self):
        if self.grid is None:
            self.grid = self.f.grid
        if self.f.grid != self.grid:
            raise ValueError("f lives on a different grid")
        if self.f.rank != "vector":
            raise ValueError("f must be a vector field")
        if not cst.is_strongly_elliptic(self.params):
            raise ValueError("params violate strong ellipticity (mu > 0, 2 mu + lambda > 0, q >= 1)")
        self.params.check_admissible()
        self.f = mean_zero_project(self.f)


@dataclass
class EllipticSolution:
    u: PeriodicField
    residual_norm: float
    newton_iters: int
    history: list = dc_field(default_factory=list)
    linear_iters: int = 0


# ---------------------------------------------------------------------------
# generic Newton-CG core
#
# Solves  sigma * P(rho w) + P(-div S(D w)) = g  for w in the range of P,
# where P is the spectral projector onto the modes selected by ``mask``.
# sigma = 0 is the plain elliptic problem; sigma > 0 is the implicit stress
# step of the time integrator.  Both are gradients of strictly convex energies.


class _Core:
    def __init__(self, p, grid, g, mask, sigma=0.0, rho=None):
        self.p = p
        self.grid = grid
        self.mask = mask
        self.sigma = float(sigma)
        self.rho = rho
        self.g = self.proj(g)
        self.d = grid.dim
        self.shape = (self.d,) + grid.shape
        self.w8 = grid.cell_volume

    def proj(self, v):
        return self.grid.ifft(self.grid.fft(v) * self.mask)

    def _mass(self, v):
        if self.sigma == 0:
            return 0.0
        return self.sigma * self.proj(self.rho * v)

    def residual(self, w):
        return self.g - self._mass(w) - self.proj(_operator(self.p, self.grid, w))

    def energy(self, w):
        e = self.grid.integrate(_energy_density(self.p, strain(self.grid, w))) - self.grid.inner(self.g, w)
        if self.sigma:
            e += 0.5 * self.sigma * self.grid.integrate(self.rho * np.sum(w * w, axis=0))
        return float(e)

    def norm(self, v):
        return self.grid.norm2(v)

    def jac_op(self, w):
        Dw = strain(self.grid, w)
        n = int(np.prod(self.shape))

        def mv(x):
            v = x.reshape(self.shape)
            out = self.proj(_jacobian(self.p, self.grid, Dw, v)) + self._mass(v)
            return out.ravel()

        return LinearOperator((n, n), matvec=mv, dtype=float), Dw

    def precond(self, Dw):
        grid, p, d = self.grid, self.p, self.d
        n = int(np.prod(self.shape))
        mu_s, lam = cst._lame(p, d)
        if d == 1 and self.sigma == 0:
            # exact inverse of -(c v')' up to aliasing: v' = (C0 - R)/c
            c = cst.stress_tangent(p, Dw, np.ones_like(Dw))[0, 0]
            inv_c = 1.0 / c
            ik = grid._ik[0]
            safe = np.where(ik == 0, 1.0, ik)
            mask = self.mask[None]

            def antideriv(a):
                ah = grid.fft(a) * mask
                return grid.ifft(np.where(ik == 0, 0.0, ah / safe))

            def mv(x):
                r = x.reshape(self.shape)
                R = antideriv(r)
                C0 = grid.integrate(R * inv_c) / grid.integrate(inv_c)
                return (-antideriv((R - C0[..., None]) * inv_c)).ravel()

            return LinearOperator((n, n), matvec=mv, dtype=float)

        B = cst.frobenius_sq(Dw) + p.delta**2
        beta = float(np.mean(cst._beta_internal(p, B, d)[0]))
        rho_bar = float(np.mean(self.rho)) if self.sigma else 0.0
        ks = grid.wavenumbers
        k2 = grid.k2
        a = self.sigma * rho_bar + beta * k2
        b = (lam + beta) * np.ones_like(k2)
        if d == 1:
            a = a + b * k2
            b = 0 * b
        safe_a = np.where(a == 0, 1.0, a)
        coef = b / (safe_a + b * k2)
        maskc = self.mask

        def mv(x):
            rh = grid.fft(x.reshape(self.shape)) * maskc
            kr = sum(ks[j] * rh[j] for j in range(d))
            out = np.stack([(rh[i] - coef * ks[i] * kr) / safe_a for i in range(d)]) * maskc
            return grid.ifft(out).ravel()

        return LinearOperator((n, n), matvec=mv, dtype=float)


def _newton(core: _Core, w0, tol, max_iter, what="Newton iteration"):
    w = core.proj(w0)
    r = core.residual(w)
    rn = core.norm(r)
    hist = [rn]
    lin_total = 0
    it = 0
    if rn <= tol:
        return w, rn, 0, hist, 0
    E = core.energy(w)
    scale = math.sqrt(core.w8)
    while it < max_iter:
        it += 1
        J, Dw = core.jac_op(w)
        M = core.precond(Dw)
        forcing = min(0.1, math.sqrt(rn / hist[0])) if hist[0] > 0 else 0.1
        atol = max(forcing * rn, 0.1 * tol) / scale
        count = [0]

        def cb(_):
            count[0] += 1

        with np.errstate(invalid="ignore", divide="ignore"):
            dx, info = cg(J, r.ravel(), rtol=0.0, atol=atol, maxiter=2000, M=M, callback=cb)
        lin_total += count[0]
        step = core.proj(dx.reshape(core.shape))
        slope = -core.grid.inner(r, step)
        alpha = 1.0
        accepted = False
        while alpha > 1e-12:
            wt = w + alpha * step
            rt = core.residual(wt)
            rtn = core.norm(rt)
            Et = core.energy(wt)
            # Armijo on the energy; once energy differences sink into
            # round-off, fall back to plain residual decrease
            flat = abs(Et - E) <= 1e-12 * (abs(E) + 1.0)
            if Et <= E + 1e-4 * alpha * slope or (flat and rtn < rn):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            raise NonConvergence(it, rn, what + " (line search stalled)")
        w, r, rn, E = wt, rt, rtn, Et
        hist.append(rn)
        if rn <= tol:
            return w, rn, it, hist, lin_total
    raise NonConvergence(it, rn, what)


def _elliptic_mask(grid):
    return (~grid.nyquist_mask) & (grid.k2 > 0)


def _frozen(p, grid, g, u0, tol, max_iter):
    """Picard iteration on the frozen operator: -A(u_k, D) u_{k+1} = f."""
    mask = _elliptic_mask(grid)
    core = _Core(p, grid, g, mask)
    d = grid.dim
    shape = (d,) + grid.shape
    n = int(np.prod(shape))
    u = core.proj(u0)
    r = core.residual(u)
    rn = core.norm(r)
    hist = [rn]
    it = 0
    while rn > tol:
        if it >= max_iter:
            raise NonConvergence(it, rn, "frozen-coefficient iteration")
        it += 1
        Du = strain(grid, u)
        a = cst.stress_jacobian(p, Du)
        A = LinearOperator((n, n), matvec=lambda x: -core.proj(_frozen_apply(grid, a, x.reshape(shape))).ravel())
        M = core.precond(Du) if d > 1 else _Core(p.replace(tau_star=0.0), grid, g, mask).precond(Du)
        w, info = gmres(A, r.ravel(), rtol=1e-3, atol=0.1 * tol / math.sqrt(core.w8), M=M, restart=50, maxiter=50)
        u = u + core.proj(w.reshape(shape))
        r = core.residual(u)
        rn = core.norm(r)
        hist.append(rn)
    return u, rn, it, hist, 0


def solve(prob: EllipticProblem, tol: float = 1e-10, max_iter: int = 100, u0=None, method: str = "newton") -> EllipticSolution:
    """Mean-zero solution of ``-div S_delta(D(u)) = f`` to L2 residual ``tol``.

    Only the part of ``f`` visible to spectral derivatives (mean-free,
    Nyquist-free) can be matched; the residual is measured against it.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    p, grid = prob.params, prob.grid
    g = grid.project_nyquist_free(prob.f.values)
    start = np.zeros((grid.dim,) + grid.shape) if u0 is None else _arr(u0)
    if method == "newton":
        core = _Core(p, grid, g, _elliptic_mask(grid))
        u, rn, it, hist, lin = _newton(core, start, tol, max_iter)
    elif method == "frozen":
        u, rn, it, hist, lin = _frozen(p, grid, g, start, tol, max_iter)
    else:
        raise ValueError(f"unknown method {method!r}")
    return EllipticSolution(_vec(grid, u), rn, it, hist, lin)


def newton_implicit(p, grid, g, rho, sigma, mask, w0, tol, max_iter):
    """Solve ``sigma P(rho w) - P div S(D w) = g`` on the modes in ``mask``."""
    core = _Core(p, grid, g, mask, sigma=sigma, rho=rho)
    w, rn, it, hist, lin = _newton(core, w0, tol, max_iter, what="implicit stress solve")
    return w, rn, it


def lame_solve(p: FluidParams, f: PeriodicField) -> PeriodicField:
    """Closed-form spectral solution of ``-mu_s Lap u - (lambda + mu_s) grad div u = f``."""
    grid = f.grid
    d = grid.dim
    mu_s, lam = cst._lame(p, d)
    fh = grid.fft(f.values) * _elliptic_mask(grid)
    ks = grid.wavenumbers
    k2 = np.where(grid.k2 == 0, 1.0, grid.k2)
    kf = sum(ks[j] * fh[j] for j in range(d))
    c = (lam + mu_s) / (mu_s * (lam + 2 * mu_s))
    uh = np.stack([fh[i] / (mu_s * k2) - c * ks[i] * kf / k2**2 for i in range(d)])
    return _vec(grid, grid.ifft(uh))


# ---------------------------------------------------------------------------
# regularity checks


def verify_w2p_1d(p: FluidParams, u: PeriodicField, f: PeriodicField, p_exp: float) -> dict:
    """Both sides of the 1D second-derivative estimate, by quadrature.

    lhs = mu/p int|u''|^p + tau*(q-1) int |u'|^2 B^((q-4)/2) |u''|^p,
    rhs = mu^(1-p)/p int |f|^p.
    """
    grid = u.grid
    if grid.dim != 1:
        raise ValueError("verify_w2p_1d needs a 1D field")
    if not 1 < p_exp < math.inf:
        raise ValueError("p_exp must lie in (1, inf)")
    up = grid.diff(u.values[0], 0)
    upp = grid.diff(up, 0)
    fv = f.values[0] if f.values.ndim > 1 else f.values
    pe = p_exp
    lhs = p.mu / pe * grid.integrate(np.abs(upp) ** pe)
    if p.tau_star > 0 and p.q != 1:
        B = up**2 + p.delta**2
        lhs += p.tau_star * (p.q - 1) * grid.integrate(up**2 * cst._power(p, B, 0.5 * (p.q - 4), "w2p") * np.abs(upp) ** pe)
    rhs = p.mu ** (1 - pe) / pe * grid.integrate(np.abs(fv) ** pe)
    lhs, rhs = float(lhs), float(rhs)
    norm_upp = float(grid.integrate(np.abs(upp) ** pe)) ** (1 / pe)
    norm_f = float(grid.integrate(np.abs(fv) ** pe)) ** (1 / pe)
    return {
        "p": pe,
        "lhs": lhs,
        "rhs": rhs,
        "satisfied": bool(lhs <= rhs * (1 + 1e-6)),
        "norm_uxx": norm_upp,
        "norm_f_over_mu": norm_f / p.mu,
    }


def _curl(grid, u):
    G = grid.grad(u)  # G[i, j] = d_j u_i
    if grid.dim == 2:
        return (G[1, 0] - G[0, 1])[None]
    return np.stack([G[2, 1] - G[1, 2], G[0, 2] - G[2, 0], G[1, 0] - G[0, 1]])


def verify_h2(p: FluidParams, u: PeriodicField, f: PeriodicField) -> dict:
    """``(mu-eps)||grad curl u||^2 + (2mu+lambda-eps)||grad div u||^2 <= ||f||^2/(4 eps)``, eps = mu/2."""
    grid = u.grid
    if grid.dim not in (2, 3):
        raise ValueError("verify_h2 needs dim 2 or 3")
    eps = p.mu / 2
    w = _curl(grid, u.values)
    dv = grid.div(u.values)
    gc = grid.grad(w)
    gd = grid.grad(dv)
    curl_term = (p.mu - eps) * grid.inner(gc, gc)
    div_term = (2 * p.mu + p.lambda_ - eps) * grid.inner(gd, gd)
    rhs = grid.inner(f.values, f.values) / (4 * eps)
    return {
        "eps": eps,
        "curl_term": float(curl_term),
        "div_term": float(div_term),
        "rhs_bound": float(rhs),
        "satisfied": bool(curl_term + div_term <= rhs * (1 + 1e-6)),
    }


def compat_rhs(p: FluidParams, rho0: PeriodicField, g: PeriodicField) -> PeriodicField:
    """Mean-zero projection of ``sqrt(rho0) g - a grad(rho0^gamma)``."""
    grid = rho0.grid
    r = rho0.values
    if np.min(r) < -1e-12:
        raise ValueError("rho0 must be nonnegative")
    r = np.maximum(r, 0.0)
    rhs = np.sqrt(r) * g.values - p.a * grid.grad(r**p.gamma_)
    return mean_zero_project(_vec(grid, rhs))


def compat_init(p: FluidParams, rho0: PeriodicField, g: PeriodicField, tol: float = 1e-10,
                max_iter: int = 100, u_init=None) -> PeriodicField:
    """Initial velocity solving ``-div S_delta(D(u0)) = sqrt(rho0) g - grad p0``."""
    prob = EllipticProblem(p, compat_rhs(p, rho0, g))
    return solve(prob, tol=tol, max_iter=max_iter, u0=u_init).u
