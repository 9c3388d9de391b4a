"""Conditional spin moments in the linear-Gaussian regime.

Covers the Euler-Maruyama integration of the conditional mean/variance of
J_z, the closed-form variance (Bessel form with a tanh fallback), the
short/long-time variance branches, <J_x> models and the squeezing parameter.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import special

from .errors import NumericError, RegimeError
from .params import PhysParams, validate_regime
from .stochproc import FieldTrajectory, MEASUREMENT_STREAM, make_rng

__all__ = [
    "ALPHA_MAX",
    "ConditionalTrajectory",
    "VarianceRegimes",
    "bessel_alpha",
    "integrate_conditional",
    "jx_approx",
    "jx_constant_field",
    "jx_relative_error",
    "squeezing",
    "variance_exact",
    "variance_noiseless",
    "variance_regimes",
    "variance_tanh",
]

ALPHA_MAX = 500.0


@dataclass(frozen=True)
class ConditionalTrajectory:
    times: np.ndarray
    jz_mean: np.ndarray
    jz_var: np.ndarray
    y_increments: np.ndarray  # y_increments[j] covers [times[j], times[j+1]]
    field: FieldTrajectory
    seed: int

    @property
    def dt(self):
        return float(self.times[1] - self.times[0])


@dataclass(frozen=True)
class VarianceRegimes:
    t_star: float
    short_time: Callable
    long_time: Callable


def jx_approx(t, p: PhysParams):
    """Mean spin length J exp(-r t / 2)."""
    return p.J * np.exp(-p.r * np.asarray(t, dtype=float) / 2.0)


def jx_constant_field(t, B_bar, p: PhysParams):
    """<J_x>(t) when the field is frozen at its time average ``B_bar``.

    Solves the unconditional (J_x, J_z) pair exactly.  When the Larmor
    term dominates the discriminant becomes negative and the hyperbolic
    functions continue to trigonometric ones.
    """
    t = np.asarray(t, dtype=float)
    a = p.M - p.gamma_x + p.gamma_z
    w = 4.0 * p.gamma * np.asarray(B_bar, dtype=float)
    d = a * a - w * w
    base = np.exp(-(p.M + p.gamma_x + 2.0 * p.gamma_y + p.gamma_z) * t / 4.0)
    # envelope times cosh(th t/4) - (a/th) sinh(th t/4), th = sqrt(d);
    # written via sinc so it stays finite as th -> 0 or turns imaginary
    th = np.sqrt(np.abs(d))
    x = th * t / 4.0
    with np.errstate(invalid="ignore", divide="ignore"):
        sinc_h = np.where(x > 1e-8, np.sinh(x) / np.where(x > 0, x, 1.0), 1.0 + x * x / 6.0)
        sinc_t = np.where(x > 1e-8, np.sin(x) / np.where(x > 0, x, 1.0), 1.0 - x * x / 6.0)
    pos = d >= 0
    c = np.where(pos, np.cosh(np.where(pos, x, 0.0)), np.cos(x))
    s = np.where(pos, sinc_h, sinc_t)
    return p.J * base * (c - a * t / 4.0 * s)


def jx_relative_error(p: PhysParams, ou, times, n_traj: int, seed: int):
    """|<J_x>_exact / <J_x>_approx - 1| along ``n_traj`` Wiener field paths.

    The exact value freezes the field at its running time average; the
    average is sampled exactly jointly with the path.  Returns
    ``(err, B, B_bar)`` with shapes (n_traj, len(times)); ``times`` must
    start at 0, where B_bar is taken as B_0 = 0.
    """
    from .stochproc import sample_wiener_integral

    if ou.chi != 0 or ou.B0 != 0:
        raise ValueError("jx_relative_error covers Wiener paths from B_0 = 0")
    times = np.asarray(times, dtype=float)
    B, I = sample_wiener_integral(ou.q_B, times, seed, n_traj)
    B_bar = np.zeros_like(I)
    B_bar[:, 1:] = I[:, 1:] / times[1:]
    approx = jx_approx(times, p)
    err = np.abs(jx_constant_field(times, B_bar, p) / approx - 1.0)
    return err, B, B_bar


def bessel_alpha(p: PhysParams) -> float:
    return 2.0 * p.J * math.sqrt(p.eta * p.gamma_y * p.M) / (p.M + p.gamma_y)


def variance_noiseless(t, p: PhysParams):
    """Conditional J_z variance without decoherence, J / (2 + 4 J t M eta)."""
    t = np.asarray(t, dtype=float)
    return p.J / (2.0 + 4.0 * p.J * t * p.M * p.eta)


def variance_tanh(t, p: PhysParams):
    """Large-alpha form of the conditional variance (cosh/sinh ratio as tanh)."""
    t = np.asarray(t, dtype=float)
    s = math.sqrt(p.M * p.gamma_y * p.eta)
    th = np.tanh(2.0 * p.J * t * s)
    r = p.M + p.gamma_y
    return 0.5 * p.J * np.exp(-r * t / 2.0) * (s + p.gamma_y * th) / (s + p.M * p.eta * th)


def _variance_bessel(t, p: PhysParams):
    M, gy, eta, J = p.M, p.gamma_y, p.eta, p.J
    r = M + gy
    s = math.sqrt(eta * gy * M)
    al = 2.0 * J * s / r
    be = al * np.exp(-r * t / 2.0)
    A, Bb = 2.0 * al, 2.0 * be
    # exponentially scaled Bessels; every product is rescaled by e^{2(al-be)}
    iA0, iA1 = special.ive(0, A), special.ive(1, A)
    kA0, kA1 = special.kve(0, A), special.kve(1, A)
    iB0, iB1 = special.ive(0, Bb), special.ive(1, Bb)
    kB0, kB1 = special.kve(0, Bb), special.kve(1, Bb)
    damp = np.exp(2.0 * (Bb - A))  # e^{4 be - 4 al}
    num = iB1 * (s * kA0 - gy * kA1) * damp + kB1 * (gy * iA1 + s * iA0)
    den = (2.0 * iB0 * (s * kA1 - M * eta * kA0) * damp
           + 2.0 * eta * M / r * kB0 * (r * iA0 + 2.0 * gy * J * iA1 / al))
    return J * np.exp(-r * t / 2.0) * num / den


def variance_exact(t, p: PhysParams, alpha_max: float = ALPHA_MAX):
    """Exact conditional J_z variance with decoherence gamma_y > 0.

    Uses the Bessel-function solution for alpha <= ``alpha_max`` and the
    tanh form otherwise, where the Bessel ratio is exponentially accurate.
    ``p`` is assumed folded (gamma_z = 0).
    """
    if p.gamma_y == 0:
        return variance_noiseless(t, p)
    t = np.asarray(t, dtype=float)
    if bessel_alpha(p) > alpha_max:
        return variance_tanh(t, p)
    return _variance_bessel(t, p)


def variance_regimes(p: PhysParams) -> VarianceRegimes:
    """Transition time t* and the short/long-time variance branches."""
    s = math.sqrt(p.M * p.gamma_y * p.eta)
    if s == 0:
        raise ValueError("variance regimes need gamma_y, M, eta > 0")
    r = p.M + p.gamma_y
    t_star = 1.0 / (2.0 * p.J * s)

    def short_time(t):
        t = np.asarray(t, dtype=float)
        return (p.J * np.exp(-r * t / 2.0) * (1.0 + 2.0 * p.J * t * p.gamma_y)
                / (2.0 + 4.0 * p.J * t * p.M * p.eta))

    def long_time(t):
        t = np.asarray(t, dtype=float)
        return 0.5 * p.J * np.exp(-r * t / 2.0) * math.sqrt(p.gamma_y / (p.eta * p.M))

    return VarianceRegimes(t_star, short_time, long_time)


def squeezing(t, p: PhysParams):
    """Squeezing parameter xi^2 = 2 J Var / <J_x>^2 and its two branches.

    Returns ``(xi2, xi2_short, xi2_long)``; the branches are ``None`` when
    gamma_y = 0.
    """
    t = np.asarray(t, dtype=float)
    jx2 = jx_approx(t, p) ** 2
    xi2 = 2.0 * p.J * variance_exact(t, p) / jx2
    if p.gamma_y == 0:
        return xi2, None, None
    reg = variance_regimes(p)
    return xi2, 2.0 * p.J * reg.short_time(t) / jx2, 2.0 * p.J * reg.long_time(t) / jx2


def integrate_conditional(p: PhysParams, field: FieldTrajectory, seed: int,
                          index: int = 0, jz0: float = 0.0, var0: float | None = None,
                          noise=None, check_regime: bool = True,
                          variance: str = "euler") -> ConditionalTrajectory:
    """Euler-Maruyama integration of the conditional J_z mean and variance.

    Runs on the field's time grid.  Each step first reads the field value at
    the start of the step, then advances the moments; the same Wiener
    increment drives the mean and the photocurrent increment.

    ``noise`` overrides the standard-normal draws (array of length
    n_steps), e.g. zeros for a deterministic run.  ``variance="exact"``
    takes the variance from :func:`variance_exact` instead of stepping it;
    the mean equation is not stiff, so coarse grids then remain usable.
    """
    if variance not in ("euler", "exact"):
        raise ValueError(f"unknown variance mode {variance!r}")
    times = field.times
    if check_regime:
        rep = validate_regime(p, field.ou, float(times[-1]) if times[-1] > 0 else 1.0 / p.r)
        if not rep.ok:
            raise RegimeError(f"parameters outside the linear-Gaussian regime: {rep.margins}")
    n = len(times) - 1
    h = np.diff(times)
    if noise is None:
        noise = make_rng(seed, index, MEASUREMENT_STREAM).standard_normal(n)
    noise = np.asarray(noise, dtype=float)
    dW = noise * np.sqrt(h)
    jz = np.empty(n + 1)
    var = np.empty(n + 1)
    dy = np.empty(n)
    jz[0] = jz0
    var[0] = p.J / 2.0 if var0 is None else var0
    exact = variance_exact(times, p) if variance == "exact" else None
    gJ, r, Me = p.gamma * p.J, p.r, p.M * p.eta
    meas = 2.0 * math.sqrt(p.eta * p.M)
    rec = 2.0 * p.eta * math.sqrt(p.M)
    B = field.values
    for j in range(n):
        t = times[j]
        e = math.exp(-r * t / 2.0)
        dy[j] = rec * jz[j] * h[j] + math.sqrt(p.eta) * dW[j]
        jz[j + 1] = jz[j] - gJ * B[j] * e * h[j] + meas * var[j] * dW[j]
        if exact is None:
            var[j + 1] = var[j] + (-4.0 * Me * var[j] ** 2 + p.gamma_y * p.J**2 * e * e) * h[j]
        else:
            var[j + 1] = exact[j + 1]
        if not (math.isfinite(jz[j + 1]) and math.isfinite(var[j + 1])):
            raise NumericError(f"conditional integration diverged at step {j}")
    return ConditionalTrajectory(times=times, jz_mean=jz, jz_var=var, y_increments=dy,
                                 field=field, seed=int(seed))
