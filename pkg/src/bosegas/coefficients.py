"""Momentum-space coefficients of the quasi-free plus cubic trial state.

Everything is a pure function of |p| (or of the pair (p, q) for the cubic
kernel), built from the scattering solution through the transform of V*f and
the two infrared cutoff scales carried by ModelParams.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .scattering import ScatteringSolution

__all__ = ["ModelParams", "KernelSet", "smooth_cutoff"]


class CoefficientDomainError(ValueError):
    """1 - 4*eta_inf <= 0 somewhere: the log defining mu_inf leaves its domain."""


def smooth_cutoff(x):
    """C-infinity monotone step: 0 for x <= 1, 1 for x >= 2.

    Built from the standard bump g(t) = exp(-1/t) (t > 0) as
    g(x-1) / (g(x-1) + g(2-x)).
    """
    x = np.asarray(x, dtype=float)
    t1 = np.clip(x - 1.0, 0.0, None)
    t2 = np.clip(2.0 - x, 0.0, None)
    with np.errstate(divide="ignore", over="ignore"):
        g1 = np.where(t1 > 0, np.exp(-1.0 / np.where(t1 > 0, t1, 1.0)), 0.0)
        g2 = np.where(t2 > 0, np.exp(-1.0 / np.where(t2 > 0, t2, 1.0)), 0.0)
    return g1 / (g1 + g2)


@dataclass(frozen=True)
class ModelParams:
    """Particle number N and density exponent kappa, with derived scales.

    The infrared cutoff for sigma sits at p_sigma = N^(kappa/2 - beta/4) and
    the cubic-kernel cutoff at p_eta = N^(kappa/2), with beta = 2 - 3*kappa.
    Length scales are the reciprocals l_eta = N^(-kappa/2),
    l_sigma = N^(-kappa/2 + beta/4); l_B = N^(-kappa/2 + beta/12) is the
    box size used for localized norms.
    """

    n: float
    kappa: float

    def __post_init__(self):
        if not (0.5 <= self.kappa < 2.0 / 3.0):
            raise ValueError(f"kappa = {self.kappa} outside [1/2, 2/3)")
        if not self.n > 1:
            raise ValueError("N must exceed 1")

    @property
    def beta(self) -> float:
        return 2.0 - 3.0 * self.kappa

    @property
    def p_sigma(self) -> float:
        return self.n ** (self.kappa / 2.0 - self.beta / 4.0)

    @property
    def p_eta(self) -> float:
        return self.n ** (self.kappa / 2.0)

    @property
    def l_eta(self) -> float:
        return self.n ** (-self.kappa / 2.0)

    @property
    def l_sigma(self) -> float:
        return self.n ** (-self.kappa / 2.0 + self.beta / 4.0)

    @property
    def l_b(self) -> float:
        return self.n ** (-self.kappa / 2.0 + self.beta / 12.0)

    @property
    def momentum_scale(self) -> float:
        """The argument scale N^(1-kappa) of the potential transforms."""
        return self.n ** (1.0 - self.kappa)


def _norm3(p):
    p = np.asarray(p, dtype=float)
    return np.sqrt(np.sum(p * p, axis=-1))


@dataclass
class KernelSet:
    """Evaluators for eta_inf, mu, sigma, gamma, eta, A and friends.

    All evaluators accept numpy arrays; radial quantities take |p| directly
    via the *_r methods and 3-vectors (shape (..., 3)) otherwise.  Immutable
    after construction and safe to share.
    """

    solution: ScatteringSolution
    params: ModelParams

    # -- scalar building blocks (radial) --------------------------------

    def g_pot(self, p_norm):
        """G(p) = N^kappa * (V f)-hat(|p| / N^(1-kappa))."""
        p_norm = np.asarray(p_norm, dtype=float)
        return self.params.n ** self.params.kappa * self.solution.vf_hat(
            p_norm / self.params.momentum_scale)

    def v_hat_scaled(self, p_norm):
        """V-hat(|p| / N^(1-kappa)) (f == 1 transform, unscaled by N^kappa)."""
        p_norm = np.asarray(p_norm, dtype=float)
        return self.solution.v_hat(p_norm / self.params.momentum_scale)

    def eta_inf_r(self, p_norm):
        p_norm = np.asarray(p_norm, dtype=float)
        safe = np.where(p_norm > 0, p_norm, 1.0)
        out = -self.g_pot(p_norm) / (2.0 * safe ** 2)
        return np.where(p_norm > 0, out, 0.0)

    def mu_inf_r(self, p_norm):
        eta = self.eta_inf_r(p_norm)
        arg = 1.0 - 4.0 * eta
        if np.any(arg <= 0):
            raise CoefficientDomainError("1 - 4*eta_inf <= 0: mu_inf undefined at this scale")
        return -0.25 * np.log(arg)

    def mu_r(self, p_norm):
        p_norm = np.asarray(p_norm, dtype=float)
        return self.mu_inf_r(p_norm) * smooth_cutoff(p_norm / self.params.p_sigma)

    def sigma_r(self, p_norm):
        return np.sinh(self.mu_r(p_norm))

    def gamma_r(self, p_norm):
        return np.cosh(self.mu_r(p_norm))

    def sigma_inf_r(self, p_norm):
        return np.sinh(self.mu_inf_r(p_norm))

    def gamma_inf_r(self, p_norm):
        return np.cosh(self.mu_inf_r(p_norm))

    def eta_r(self, p_norm):
        """Cubic-kernel coefficient eta: eta_inf cut below p_eta."""
        p_norm = np.asarray(p_norm, dtype=float)
        return self.eta_inf_r(p_norm) * smooth_cutoff(p_norm / self.params.p_eta)

    def tanh_identity_residual_r(self, p_norm):
        """tanh(2 mu_inf) + G/(p^2 + G); identically 0 in exact arithmetic."""
        p_norm = np.asarray(p_norm, dtype=float)
        g = self.g_pot(p_norm)
        return np.tanh(2.0 * self.mu_inf_r(p_norm)) + g / (p_norm ** 2 + g)

    # -- vector wrappers -------------------------------------------------

    def eta_infinity(self, p):
        return self.eta_inf_r(_norm3(p))

    def mu_sigma_gamma(self, p):
        pn = _norm3(p)
        return self.mu_inf_r(pn), self.mu_r(pn), self.sigma_r(pn), self.gamma_r(pn)

    def tanh_identity_residual(self, p):
        return self.tanh_identity_residual_r(_norm3(p))

    # -- cubic kernel and symmetrizations --------------------------------

    def cubic_kernel(self, p, q):
        """A(p, q) = 2 p^2 eta(p) sigma(q) / (sqrt(N) (p^2+q^2+(p+q)^2))."""
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        p2 = np.sum(p * p, axis=-1)
        q2 = np.sum(q * q, axis=-1)
        s2 = np.sum((p + q) ** 2, axis=-1)
        denom = p2 + q2 + s2
        safe = np.where(denom > 0, denom, 1.0)
        num = 2.0 * p2 * self.eta_r(np.sqrt(p2)) * self.sigma_r(np.sqrt(q2))
        out = num / (np.sqrt(self.params.n) * safe)
        return np.where((p2 > 0) & (q2 > 0), out, 0.0)

    def symmetrized_kernels(self, p, q):
        """Three- and six-term symmetrizations of the cubic kernel."""
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        r = -(p + q)

        def a3(x, y, z):
            # A3 with the convention (x, y) plus cyclic third slot z = -(x+y)
            return self.cubic_kernel(x, y) + self.cubic_kernel(y, x) + self.cubic_kernel(z, x)

        a3_pq = a3(p, q, r)
        a3_rq = a3(r, q, p)
        return a3_pq, a3_pq + a3_rq

    def kinetic_low_kernel(self, p, q):
        """Low-momentum remainder of the kinetic conjugation.

        -(1 - chi(|p|/p_eta)) N^kappa (Vf)-hat(|p|/N^(1-kappa)) sigma(q) / sqrt(N);
        vanishes for |p| > 2 p_eta.
        """
        pn = _norm3(p)
        qn = _norm3(q)
        cut = 1.0 - smooth_cutoff(pn / self.params.p_eta)
        return -cut * self.g_pot(pn) * self.sigma_r(qn) / np.sqrt(self.params.n)
