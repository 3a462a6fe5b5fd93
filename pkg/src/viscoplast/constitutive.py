"""Stress laws for regularized power-law and Bingham fluids.

Tensors are plain ndarrays whose first two axes are the matrix indices;
any trailing axes are treated as a batch (grid points, random samples),
so every function here works pointwise on whole fields.

In one dimension the viscous part of the stress is ``mu * s``: the
shear/bulk split has no meaning there and ``lambda_`` is ignored.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .errors import SingularEvaluation

__all__ = [
    "FluidParams",
    "Unyielded",
    "rate_of_strain",
    "frobenius_sq",
    "stress_delta",
    "stress_tangent",
    "stress_bingham_1d",
    "beta_fn",
    "beta_prime",
    "flux_F",
    "stress_jacobian",
    "symbol_form",
    "is_strongly_elliptic",
    "has_lp_regularity",
    "monotonicity_gap",
    "lemma_integrand",
]


@dataclass(frozen=True)
class FluidParams:
    """Physical and regularization constants.

    Construction only rejects values for which the formulas are meaningless
    (negative yield stress or delta, a <= 0, gamma <= 1, non-finite input).
    The standing assumptions ``mu > 0``, ``2 mu + lambda > 0`` and ``q >= 1``
    are checked by :meth:`check_admissible`, which every solver calls, so that
    :func:`is_strongly_elliptic` can still be asked about inadmissible sets.
    """

    mu: float = 1.0
    lambda_: float = 0.0
    tau_star: float = 0.0
    delta: float = 0.1
    q: float = 2.0
    a: float = 1.0
    gamma_: float = 1.4

    def __post_init__(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, (int, float, np.floating, np.integer)) or not math.isfinite(v):
                raise ValueError(f"{f.name} must be a finite number, got {v!r}")
            object.__setattr__(self, f.name, float(v))
        if self.tau_star < 0:
            raise ValueError("tau_star must be >= 0")
        if self.delta < 0:
            raise ValueError("delta must be >= 0")
        if self.a <= 0:
            raise ValueError("a must be > 0")
        if self.gamma_ <= 1:
            raise ValueError("gamma_ must be > 1")

    def check_admissible(self):
        if self.mu <= 0:
            raise ValueError("mu must be > 0")
        if 2 * self.mu + self.lambda_ <= 0:
            raise ValueError("2*mu + lambda_ must be > 0 (strong ellipticity)")
        if self.q < 1:
            raise ValueError("q must be >= 1")
        return self

    def replace(self, **changes) -> "FluidParams":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class Unyielded:
    """Set-valued Bingham stress at zero strain rate: any value with |S| < bound."""

    bound: float


def _lame(p: FluidParams, d: int) -> tuple[float, float]:
    # (shear, bulk) coefficients of the linear part 2*mu_s*D + lam*tr(D)*I
    if d == 1:
        return 0.5 * p.mu, 0.0
    return p.mu, p.lambda_


def rate_of_strain(grad_u):
    """Symmetric part of a velocity gradient ``grad_u[i, j] = d_j u_i``."""
    g = np.asarray(grad_u, dtype=float)
    return 0.5 * (g + np.swapaxes(g, 0, 1))


def frobenius_sq(A):
    A = np.asarray(A)
    return np.sum(np.abs(A) ** 2, axis=(0, 1))


def _power(p: FluidParams, B, exponent: float, what: str):
    B = np.asarray(B, dtype=float)
    if exponent == 0:
        return np.ones_like(B)
    if exponent < 0 and np.any(B <= 0):
        raise SingularEvaluation(
            f"{what}: B = |D|^2 + delta^2 vanishes with q={p.q}, delta={p.delta}"
        )
    return B ** exponent


def _trace(A):
    return np.trace(A, axis1=0, axis2=1)


def _eye_like(A):
    d = A.shape[0]
    return np.eye(d).reshape((d, d) + (1,) * (A.ndim - 2))


def flux_F(p: FluidParams, A):
    """Regularized power-law flux ``(|A|^2 + delta^2)^((q-2)/2) A``."""
    A = np.asarray(A, dtype=float)
    B = frobenius_sq(A) + p.delta**2
    return _power(p, B, 0.5 * (p.q - 2.0), "flux_F") * A


def stress_delta(p: FluidParams, D):
    """Regularized stress ``2 mu D + lambda tr(D) I + tau* F(D)``."""
    D = np.asarray(D, dtype=float)
    mu_s, lam = _lame(p, D.shape[0])
    S = 2.0 * mu_s * D + lam * _trace(D) * _eye_like(D)
    if p.tau_star > 0:
        S = S + p.tau_star * flux_F(p, D)
    return S


def stress_tangent(p: FluidParams, D, E):
    """Directional derivative of :func:`stress_delta` at ``D`` along ``E``."""
    D = np.asarray(D, dtype=float)
    E = np.asarray(E, dtype=float)
    mu_s, lam = _lame(p, D.shape[0])
    dS = 2.0 * mu_s * E + lam * _trace(E) * _eye_like(E)
    if p.tau_star > 0:
        B = frobenius_sq(D) + p.delta**2
        phi = _power(p, B, 0.5 * (p.q - 2.0), "stress_tangent")
        dS = dS + p.tau_star * phi * E
        if p.q != 2:
            dE = np.sum(D * E, axis=(0, 1))
            dS = dS + 4.0 * beta_prime(p, B) * dE * D
    return dS


def stress_bingham_1d(p: FluidParams, s: float):
    """Bingham stress ``mu s + tau* sign(s)``, or :class:`Unyielded` at ``s == 0``."""
    if s == 0:
        return Unyielded(p.tau_star)
    return p.mu * s + p.tau_star * math.copysign(1.0, s)


def beta_fn(p: FluidParams, B):
    """``mu + (tau*/2) B^((q-2)/2)``."""
    if p.tau_star == 0:
        return p.mu + np.zeros_like(np.asarray(B, dtype=float))
    return p.mu + 0.5 * p.tau_star * _power(p, B, 0.5 * (p.q - 2.0), "beta_fn")


def beta_prime(p: FluidParams, B):
    """Analytic derivative of :func:`beta_fn` with respect to ``B``."""
    if p.q == 2 or p.tau_star == 0:
        return np.zeros_like(np.asarray(B, dtype=float))
    return 0.25 * p.tau_star * (p.q - 2.0) * _power(p, B, 0.5 * (p.q - 4.0), "beta_prime")


def _beta_internal(p: FluidParams, B, d: int):
    mu_s, lam = _lame(p, d)
    if p.tau_star == 0:
        return mu_s + np.zeros_like(np.asarray(B, dtype=float)), lam
    beta = mu_s + 0.5 * p.tau_star * _power(p, B, 0.5 * (p.q - 2.0), "stress_jacobian")
    return beta, lam


def stress_jacobian(p: FluidParams, D):
    """Coefficient tensor ``a[i, j, k, l]`` of the quasi-linear form of ``div S``.

    ``div S(D(u))_i = sum_{jkl} a[i, j, k, l] d_k d_l u_j`` holds exactly, with
    ``a = beta d_kl d_ij + (lambda + beta) d_il d_jk + 4 beta' D_ik D_jl``.
    """
    D = np.asarray(D, dtype=float)
    d = D.shape[0]
    B = frobenius_sq(D) + p.delta**2
    beta, lam = _beta_internal(p, B, d)
    bp = beta_prime(p, B)
    I = np.eye(d)
    batch = D.shape[2:]
    ones = (1,) * len(batch)
    a = beta * np.einsum("kl,ij->ijkl", I, I).reshape((d,) * 4 + ones)
    a = a + (lam + beta) * np.einsum("il,jk->ijkl", I, I).reshape((d,) * 4 + ones)
    a = a + 4.0 * bp * np.einsum("ik...,jl...->ijkl...", D, D)
    return a


def symbol_form(p: FluidParams, D, xi, eta):
    """Principal-symbol quadratic form ``(A(xi) eta, eta)`` for real ``xi``, complex ``eta``.

    Returns the closed form ``beta |xi|^2 |eta|^2 + (lambda + beta)|(xi, eta)|^2
    + 4 beta' |(D xi, eta)|^2``.  The same value is assembled from
    :func:`stress_jacobian`; its imaginary part must vanish.
    """
    D = np.asarray(D, dtype=float)
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=complex)
    d = D.shape[0]
    B = frobenius_sq(D) + p.delta**2
    beta, lam = _beta_internal(p, B, d)
    bp = beta_prime(p, B)
    xi2 = np.sum(xi**2, axis=0)
    eta2 = np.sum(np.abs(eta) ** 2, axis=0)
    xe = np.sum(xi * eta, axis=0)
    Dxi = np.einsum("ik...,k...->i...", D, xi)
    dxe = np.sum(Dxi * eta, axis=0)
    closed = beta * xi2 * eta2 + (lam + beta) * np.abs(xe) ** 2 + 4.0 * bp * np.abs(dxe) ** 2

    a = stress_jacobian(p, D)
    assembled = np.einsum("ijkl...,k...,l...,j...,i...->...", a, xi, xi, eta, np.conj(eta))
    scale = np.maximum(np.abs(assembled), 1.0)
    if np.any(np.abs(assembled.imag) > 1e-12 * scale):
        raise ArithmeticError("symbol form has a non-negligible imaginary part")
    if not np.allclose(assembled.real, closed, rtol=1e-10, atol=1e-12):
        raise ArithmeticError("assembled symbol disagrees with the closed form")
    return closed


def is_strongly_elliptic(p: FluidParams) -> bool:
    """``mu > 0``, ``2 mu + lambda > 0``, ``q >= 1`` and ``delta >= 0``."""
    return p.mu > 0 and 2 * p.mu + p.lambda_ > 0 and p.q >= 1 and p.delta >= 0


def has_lp_regularity(p: FluidParams, delta_min: float = 0.0) -> bool:
    """Strong ellipticity plus ``delta`` bounded away from zero (``delta > delta_min``).

    Kept separate from :func:`is_strongly_elliptic`: the W^{2,p} theory for
    d >= 2 needs the regularization bounded below, ellipticity does not.
    """
    return is_strongly_elliptic(p) and p.delta > delta_min


def monotonicity_gap(p: FluidParams, C, D):
    """Duality product ``sum_ij (F(C) - F(D))_ij (C - D)_ij``."""
    C = np.asarray(C, dtype=float)
    D = np.asarray(D, dtype=float)
    return np.sum((flux_F(p, C) - flux_F(p, D)) * (C - D), axis=(0, 1))


def lemma_integrand(p: FluidParams, D, E):
    """``B^((q-4)/2) ((q-1)|D|^2 + delta^2) |E|^2``, nonnegative for ``q >= 1``."""
    D = np.asarray(D, dtype=float)
    D2 = frobenius_sq(D)
    B = D2 + p.delta**2
    return _power(p, B, 0.5 * (p.q - 4.0), "lemma_integrand") * (
        (p.q - 1.0) * D2 + p.delta**2
    ) * frobenius_sq(E)
