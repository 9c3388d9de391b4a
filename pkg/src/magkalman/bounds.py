"""Bayesian information and the classical-simulation (CS) precision bound.

The dephasing channel gamma_y D[J_y] combined with a field rotation about y
equals an average of unitary rotations with frequency omega ~ N(gamma B,
gamma_y / dt).  Treating omega as the only thing any measurement can reveal
gives a Gaussian recurrence for the information about B_k and, in the
continuum, a tanh/coth bound.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, UnsupportedError
from .params import INFINITE, OuParams, PhysParams, is_infinite
from .stochproc import GaussianLaw, _transition_var

__all__ = [
    "CSLimit",
    "DiscretizationParams",
    "NoDecoherenceWarning",
    "RecurrenceState",
    "averaged_dephasing_rate",
    "cs_limit",
    "fisher_continuum",
    "fisher_discrete",
    "fisher_recurrence_step",
    "iterate_variance",
    "mixing_law",
    "prior_information",
    "prior_variance",
    "variance_closed_form",
]


class NoDecoherenceWarning(UserWarning):
    """gamma_y = 0: the CS construction gives no floor (bound is zero)."""


@dataclass(frozen=True)
class RecurrenceState:
    C: float
    mu: float
    V: float


@dataclass(frozen=True)
class DiscretizationParams:
    dt: float
    k: int
    V_P: float
    V_Q: float

    @classmethod
    def from_physics(cls, p: PhysParams, ou: OuParams, dt: float, k: int):
        if not dt > 0:
            raise ConfigError("dt must be positive")
        return cls(dt, int(k), float(_transition_var(ou.chi, ou.q_B, dt)), p.gamma_y / dt)


def prior_variance(t, ou: OuParams):
    """Variance of B_t under the prior: sigma0^2 e^{-2 chi t} + V_P(t)."""
    t = np.asarray(t, dtype=float)
    if is_infinite(ou.sigma0_sq):
        return np.full_like(t, np.inf)
    return ou.sigma0_sq * np.exp(-2.0 * ou.chi * t) + _transition_var(ou.chi, ou.q_B, t)


def prior_information(t, ou: OuParams):
    """Fisher information of the prior law of B_t (zero for an improper prior)."""
    v = prior_variance(t, ou)
    with np.errstate(divide="ignore"):
        return 1.0 / v


def mixing_law(B: float, dt: float, p: PhysParams) -> GaussianLaw:
    """Law of the rotation frequency omega given the field B over a step dt."""
    if not dt > 0:
        raise ConfigError("dt must be positive")
    if p.gamma_y == 0:
        raise ConfigError("gamma_y = 0: the mixture degenerates to a point mass")
    return GaussianLaw(p.gamma * B, p.gamma_y / dt)


def fisher_recurrence_step(prev: RecurrenceState, omega: float, d: DiscretizationParams,
                           gamma: float) -> RecurrenceState:
    """One Gaussian convolution step of the (C, mu, V) recurrence."""
    VP, VQ, V = d.V_P, d.V_Q, prev.V
    if not V > 0:
        raise ValueError("previous variance must be positive")
    if math.isinf(VQ):
        # an infinitely wide mixing law carries no information (and no mass)
        return RecurrenceState(0.0, prev.mu, VP + V)
    den = VQ + gamma**2 * V
    C = (prev.C / math.sqrt(2.0 * math.pi * (gamma**2 * VP + VQ + VP * VQ / V))
         * math.exp(-(omega - gamma * prev.mu) ** 2 / (2.0 * den)))
    mu = (VQ * prev.mu + V * gamma * omega) / den
    return RecurrenceState(C, mu, VP + VQ * V / den)


def iterate_variance(k: int, d: DiscretizationParams, gamma: float, V0: float) -> float:
    """V_k by direct iteration of the variance recurrence from V_0."""
    V = V0
    VP, VQ, g2 = d.V_P, d.V_Q, gamma * gamma
    for _ in range(int(k)):
        V = VP + VQ * V / (VQ + g2 * V)
    return V


def variance_closed_form(k, d: DiscretizationParams, gamma: float, sigma0_sq=INFINITE):
    """Closed-form V_k for an improper initial prior (V_0 = infinity).

    V_k = V_P/2 + s/(2 gamma) (1 + 2/(rho^k - 1)) with
    s = sqrt(V_P (4 V_Q + V_P gamma^2)); rho^k - 1 is evaluated as
    expm1(k log rho) so large k neither overflows nor loses precision.
    """
    if not is_infinite(sigma0_sq):
        raise UnsupportedError("closed form only for an improper prior; use iterate_variance")
    k = np.asarray(k, dtype=float)
    VP, VQ = d.V_P, d.V_Q
    if VP == 0:
        # static field: information adds up, 1/V_k = k gamma^2 / V_Q
        with np.errstate(divide="ignore"):
            return VQ / (gamma * gamma * k)
    s = math.sqrt(VP * (4.0 * VQ + VP * gamma**2))
    lo = 2.0 * VQ + gamma * (VP * gamma - s)
    log_rho = math.log1p(2.0 * gamma * s / lo)
    with np.errstate(over="ignore", divide="ignore"):
        tail = 2.0 / np.expm1(k * log_rho)
    return VP / 2.0 + s / (2.0 * gamma) * (1.0 + tail)


def fisher_discrete(k: int, d: DiscretizationParams, gamma: float, ou: OuParams) -> float:
    """Discrete-time CS information gamma^2/V_Q - 1/V_P^(k) + 1/V_k."""
    if is_infinite(ou.sigma0_sq):
        Vk = float(variance_closed_form(k, d, gamma))
        inv_prior = 0.0
    else:
        Vk = iterate_variance(k, d, gamma, ou.sigma0_sq) if ou.sigma0_sq > 0 else None
        inv_prior = float(1.0 / prior_variance(k * d.dt, ou))
        if Vk is None:
            raise UnsupportedError("sigma0_sq = 0 makes the recurrence degenerate")
    return gamma**2 / d.V_Q - inv_prior + 1.0 / Vk


def fisher_continuum(t, p: PhysParams, ou: OuParams):
    """Continuum CS information sqrt(gamma^2/(gamma_y q_B)) tanh(t sqrt(q_B gamma^2/gamma_y))."""
    t = np.asarray(t, dtype=float)
    g, gy, qB = p.gamma, p.gamma_y, ou.q_B
    if gy == 0:
        return np.full_like(t, np.inf)
    if qB == 0:
        return g * g * t / gy
    return math.sqrt(g * g / (gy * qB)) * np.tanh(t * math.sqrt(qB * g * g / gy))


class CSLimit(NamedTuple):
    value: np.ndarray
    short_time: np.ndarray  # gamma_y / (gamma^2 t)
    long_time: float        # sqrt(gamma_y q_B) / gamma
    t_cross: float          # t'_CS


def cs_limit(t, p: PhysParams, ou: OuParams) -> CSLimit:
    """CS lower bound on the field aMSE and its short/long-time branches."""
    t = np.asarray(t, dtype=float)
    g, gy, qB = p.gamma, p.gamma_y, ou.q_B
    if gy == 0:
        warnings.warn("gamma_y = 0: no decoherence, the CS bound is zero", NoDecoherenceWarning)
        z = np.zeros_like(t)
        return CSLimit(z, z, 0.0, math.inf)
    with np.errstate(divide="ignore"):
        short = gy / (g * g * t)
    if qB == 0:
        return CSLimit(short, short, 0.0, math.inf)
    x = t * math.sqrt(qB * g * g / gy)
    long = math.sqrt(gy * qB) / g
    with np.errstate(divide="ignore"):
        val = long / np.tanh(x)
    return CSLimit(val, short, long, math.sqrt(gy / qB) / g)


def averaged_dephasing_rate(t, p: PhysParams, ou: OuParams):
    """Dephasing rate gamma^2 q_B t^2 of the field-averaged unitary dynamics."""
    if ou.chi != 0:
        raise UnsupportedError("only the Wiener field (chi = 0) is covered")
    t = np.asarray(t, dtype=float)
    return p.gamma**2 * ou.q_B * t * t
