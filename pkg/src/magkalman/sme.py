"""Small-J quantum oracle in the symmetric (Dicke) subspace.

Integrates the conditional stochastic master equation for a collective
spin under continuous J_z measurement, the unconditional master equation,
and checks two channel identities: y-axis dephasing as a Gaussian mixture
of y-rotations, and the dephasing produced by averaging unitary dynamics
over Wiener field paths.

Rates may be given either as :class:`~magkalman.params.PhysParams` or as
:class:`SpinRates`, which also admits M = 0 (needed for purely unitary or
purely dissipative runs).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy import linalg

from .errors import ConfigError, NumericError
from .params import OuParams, PhysParams
from .stochproc import (AUX_STREAM, FieldTrajectory, MEASUREMENT_STREAM, make_rng,
                        sample_wiener_integral)

__all__ = [
    "DickeOperators",
    "FieldAverageReport",
    "MixtureReport",
    "SmeResult",
    "SpinRates",
    "UnconditionalPath",
    "css_state",
    "cs_mixture_check",
    "dicke_operators",
    "expectation",
    "field_average_check",
    "integrate_sme",
    "integrate_unconditional",
    "trace_distance",
]

MAX_J = 50
POSITIVITY_TOL = -1e-8
MAX_REFINE = 6


class DickeOperators(NamedTuple):
    """Collective spin matrices in the |J, m> basis ordered m = J, J-1, ..., -J."""

    J: float
    Jx: np.ndarray
    Jy: np.ndarray
    Jz: np.ndarray

    @property
    def dim(self):
        return self.Jz.shape[0]


@dataclass(frozen=True)
class SpinRates:
    """Rates for the oracle; unlike PhysParams, M = 0 and eta = 0 are allowed."""

    gamma: float = 1e6
    M: float = 0.0
    eta: float = 0.0
    gamma_x: float = 0.0
    gamma_y: float = 0.0
    gamma_z: float = 0.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ConfigError("SpinRates.gamma: must be positive")
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigError("SpinRates.eta: must lie in [0, 1]")
        for name in ("M", "gamma_x", "gamma_y", "gamma_z"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigError(f"SpinRates.{name}: must be finite and >= 0")

    @classmethod
    def from_params(cls, p):
        if isinstance(p, cls):
            return p
        if isinstance(p, PhysParams):
            return cls(p.gamma, p.M, p.eta, p.gamma_x, p.gamma_y, p.gamma_z)
        raise ConfigError(f"expected PhysParams or SpinRates, got {type(p).__name__}")


def dicke_operators(J) -> DickeOperators:
    if J <= 0 or abs(2 * J - round(2 * J)) > 1e-12:
        raise ConfigError(f"J must be a positive half-integer, got {J}")
    if J > MAX_J:
        raise ConfigError(f"J={J} exceeds the dimension cap (J <= {MAX_J})")
    J = round(2 * J) / 2.0
    m = J - np.arange(int(round(2 * J)) + 1)
    # <m+1|J+|m> = sqrt(J(J+1) - m(m+1)) sits just above the diagonal
    jp = np.diag(np.sqrt(J * (J + 1) - m[1:] * (m[1:] + 1)), 1).astype(complex)
    jm = jp.conj().T
    return DickeOperators(J, (jp + jm) / 2.0, (jp - jm) / 2j, np.diag(m).astype(complex))


def _ops_for(rho) -> DickeOperators:
    d = rho.shape[0]
    if rho.shape != (d, d) or d < 2:
        raise ConfigError("density matrix must be square with dimension >= 2")
    return dicke_operators((d - 1) / 2.0)


def css_state(J) -> np.ndarray:
    """Coherent spin state polarized along +x (top eigenvector of J_x)."""
    ops = dicke_operators(J)
    w, v = np.linalg.eigh(ops.Jx)
    psi = v[:, np.argmax(w)]
    return np.outer(psi, psi.conj())


def expectation(states, op):
    """<op> for a single state or a stack of states (real part)."""
    return np.einsum("...ij,ji->...", states, op).real


def trace_distance(a, b) -> float:
    """Half the trace norm of a - b for Hermitian a, b."""
    return 0.5 * float(np.abs(np.linalg.eigvalsh(a - b)).sum())


def _dissipator(L, rho):
    LL = L @ L
    return L @ rho @ L - 0.5 * (LL @ rho + rho @ LL)


def _lindblad(rho, ops, rates, B):
    out = -1j * rates.gamma * B * (ops.Jy @ rho - rho @ ops.Jy)
    for g, L in ((rates.gamma_x, ops.Jx), (rates.gamma_y, ops.Jy), (rates.gamma_z, ops.Jz)):
        if g:
            out = out + g * _dissipator(L, rho)
    if rates.M:
        out = out + rates.M * _dissipator(ops.Jz, rho)
    return out


# conditional dynamics ------------------------------------------------------


@dataclass(frozen=True)
class SmeResult:
    """Conditional trajectory of the oracle.

    ``y_increments[j]`` is the record increment over [times[j], times[j+1]]
    in the same normalization as the Gaussian model.  ``trace_error`` is the
    largest deviation of Tr(rho) from 1 over all stored steps; for the
    Euler scheme it is measured before renormalization.
    """

    times: np.ndarray
    states: np.ndarray | None
    y_increments: np.ndarray
    jx: np.ndarray
    jy: np.ndarray
    jz: np.ndarray
    var_z: np.ndarray
    var_y: np.ndarray
    trace_error: float
    min_eigenvalue: float
    refinements: int


def _kraus_step(rho, ops, rates, B, h, dW):
    """Positivity-preserving first-order step of the diffusive SME.

    rho -> K rho K^+ + (unmonitored jumps) h, normalized, with
    K = 1 - (iH + G/2) h + sqrt(M eta) Jz dY + (M eta / 2) Jz^2 (dY^2 - h).
    To first order this is the Euler-Maruyama update; it never leaves the
    positive cone.
    """
    Jz = ops.Jz
    kz = math.sqrt(rates.M * rates.eta)
    ez = float(np.trace(Jz @ rho).real)
    dY = 2.0 * kz * ez * h + dW
    G = rates.M * (Jz @ Jz)
    jumps = []
    for g, L in ((rates.gamma_x, ops.Jx), (rates.gamma_y, ops.Jy), (rates.gamma_z, ops.Jz)):
        if g:
            G = G + g * (L @ L)
            jumps.append((g, L))
    if rates.M * (1.0 - rates.eta):
        jumps.append((rates.M * (1.0 - rates.eta), Jz))
    K = (np.eye(len(rho)) - (1j * rates.gamma * B * ops.Jy + 0.5 * G) * h
         + kz * dY * Jz + 0.5 * kz * kz * (dY * dY - h) * (Jz @ Jz))
    new = K @ rho @ K.conj().T
    for g, L in jumps:
        new = new + g * h * (L @ rho @ L)
    new = 0.5 * (new + new.conj().T)
    new /= np.trace(new).real
    return new, ez, 0.0


def _euler_step(rho, ops, rates, B, h, dW):
    Jz = ops.Jz
    kz = math.sqrt(rates.M * rates.eta)
    ez = float(np.trace(Jz @ rho).real)
    inn = Jz @ rho + rho @ Jz - 2.0 * ez * rho
    new = rho + _lindblad(rho, ops, rates, B) * h + kz * inn * dW
    new = 0.5 * (new + new.conj().T)
    tr = np.trace(new).real
    return new / tr, ez, abs(tr - 1.0)


def _bridge(dW, h, n, rng):
    """n increments of a Brownian path over a step of length h summing to dW."""
    z = rng.standard_normal(n) * math.sqrt(h / n)
    return z - (z.sum() - dW) / n


def integrate_sme(rho0, p, field: FieldTrajectory, seed: int, dt: float | None = None,
                  index: int = 0, scheme: str = "kraus", store_every: int = 1,
                  noise=None) -> SmeResult:
    """Integrate the conditional SME along a field path.

    The step grid is the field grid, optionally subdivided so that each
    field interval holds an integer number of steps of length ``dt``.  On
    the field grid and with ``dt=None`` the Wiener increments are the ones
    :func:`magkalman.moments.integrate_conditional` draws for the same
    ``(seed, index)``, so the two can be compared path by path.

    ``scheme="kraus"`` (default) uses a positivity-preserving step;
    ``scheme="euler"`` uses plain Euler-Maruyama with trace renormalization
    and halves any step whose result has an eigenvalue below -1e-8 (up to
    six times) before raising :class:`NumericError`.
    """
    rates = SpinRates.from_params(p)
    rho = np.array(rho0, dtype=complex)
    ops = _ops_for(rho)
    if isinstance(p, PhysParams) and abs(ops.J - p.J) > 1e-9:
        raise ConfigError(f"state dimension gives J={ops.J}, parameters have J={p.J}")
    if scheme not in ("kraus", "euler"):
        raise ConfigError(f"unknown scheme {scheme!r}")
    step_fn = _kraus_step if scheme == "kraus" else _euler_step
    ftimes = np.asarray(field.times, dtype=float)
    fsteps = np.diff(ftimes)
    if dt is None:
        sub = np.ones(len(fsteps), dtype=int)
    else:
        sub = np.rint(fsteps / dt).astype(int)
        if np.any(sub < 1) or np.any(np.abs(sub * dt - fsteps) > 1e-9 * fsteps):
            raise ConfigError("dt must divide every field step")
    h_all = np.repeat(fsteps / sub, sub)
    if rates.M * h_all.max() > 1e-2 + 1e-15:
        raise ConfigError(f"step too coarse for M: M dt = {rates.M * h_all.max():.3g} > 1e-2")
    B_all = np.repeat(np.asarray(field.values, dtype=float)[:-1], sub)
    times = np.concatenate([[ftimes[0]], ftimes[0] + np.cumsum(h_all)])
    n = len(h_all)
    if noise is None:
        noise = make_rng(seed, index, MEASUREMENT_STREAM).standard_normal(n)
    dW_all = np.asarray(noise, dtype=float) * np.sqrt(h_all)
    aux = make_rng(seed, index, AUX_STREAM)

    Jx, Jy, Jz = ops.Jx, ops.Jy, ops.Jz
    Jy2, Jz2 = Jy @ Jy, Jz @ Jz
    keep = store_every > 0
    n_store = n // store_every + 1 if keep else 0
    states = np.empty((n_store,) + rho.shape, dtype=complex) if keep else None
    mom = np.empty((6, n + 1))
    dy = np.empty(n)
    kz = math.sqrt(rates.M * rates.eta)

    def moments(r):
        return [expectation(r, o) for o in (Jx, Jy, Jz, Jy2, Jz2)]

    mom[:5, 0] = moments(rho)
    if keep:
        states[0] = rho
    trace_err = abs(np.trace(rho).real - 1.0)
    min_eig = float(np.linalg.eigvalsh(rho).min())
    refinements = 0
    for j in range(n):
        h, dW, B = h_all[j], dW_all[j], B_all[j]
        for level in range(MAX_REFINE + 1):
            parts = [dW] if level == 0 else _bridge(dW, h, 2**level, aux)
            hh = h / len(parts)
            r, y, drift = rho, 0.0, 0.0
            for dWp in parts:
                r, ez, d = step_fn(r, ops, rates, B, hh, dWp)
                # record increment uses the same Wiener increment
                y += 2.0 * rates.eta * math.sqrt(rates.M) * ez * hh + math.sqrt(rates.eta) * dWp
                drift = max(drift, d)
            ev = float(np.linalg.eigvalsh(r).min())
            if ev >= POSITIVITY_TOL:
                break
            refinements += 1
        else:
            raise NumericError(
                f"step {j}: eigenvalue {ev:.3g} below {POSITIVITY_TOL} after "
                f"{MAX_REFINE} halvings; reduce dt")
        rho = r
        dy[j] = y
        trace_err = max(trace_err, drift, abs(np.trace(rho).real - 1.0))
        min_eig = min(min_eig, ev)
        mom[:5, j + 1] = moments(rho)
        if keep and (j + 1) % store_every == 0:
            states[(j + 1) // store_every] = rho
    jx, jy, jz, jy2, jz2 = mom[:5]
    return SmeResult(times=times, states=states, y_increments=dy, jx=jx.copy(), jy=jy.copy(),
                     jz=jz.copy(), var_z=jz2 - jz**2, var_y=jy2 - jy**2,
                     trace_error=float(trace_err), min_eigenvalue=min_eig,
                     refinements=refinements)


# unconditional dynamics ----------------------------------------------------


class UnconditionalPath(NamedTuple):
    times: np.ndarray
    states: np.ndarray


def integrate_unconditional(rho0, p, B_fn: Callable | float, dt: float, n: int) -> UnconditionalPath:
    """Classical RK4 integration of the unconditional master equation.

    ``B_fn`` is a callable B(t) or a constant field.
    """
    rates = SpinRates.from_params(p)
    rho = np.array(rho0, dtype=complex)
    ops = _ops_for(rho)
    field = B_fn if callable(B_fn) else (lambda t, b=float(B_fn): b)
    times = dt * np.arange(n + 1)
    out = np.empty((n + 1,) + rho.shape, dtype=complex)
    out[0] = rho
    for j in range(n):
        t = times[j]
        k1 = _lindblad(rho, ops, rates, field(t))
        k2 = _lindblad(rho + 0.5 * dt * k1, ops, rates, field(t + 0.5 * dt))
        k3 = _lindblad(rho + 0.5 * dt * k2, ops, rates, field(t + 0.5 * dt))
        k4 = _lindblad(rho + dt * k3, ops, rates, field(t + dt))
        rho = rho + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(rho)):
            raise NumericError(f"unconditional integration diverged at step {j}")
        out[j + 1] = rho
    return UnconditionalPath(times, out)


# channel identities --------------------------------------------------------


def _y_basis(ops):
    w, U = np.linalg.eigh(ops.Jy)
    m = np.round(w * 2.0) / 2.0
    return m, U


class MixtureReport(NamedTuple):
    """Outcome of the mixture-of-rotations check.

    ``distance`` is half the trace norm between the dephasing channel output
    and the Monte Carlo mixture; ``stderr`` is the predicted RMS Frobenius
    norm of the Monte Carlo error, estimated from the sample variance.
    """

    distance: float
    stderr: float
    channel: np.ndarray
    mixture: np.ndarray


def _dephasing_superop(ops, gamma_B, gamma_y):
    d = ops.dim
    I = np.eye(d)
    Jy = ops.Jy
    Jy2 = Jy @ Jy
    # row-major vec: vec(A X B) = (A kron B^T) vec(X)
    L = -1j * gamma_B * (np.kron(Jy, I) - np.kron(I, Jy.T))
    L = L + gamma_y * (np.kron(Jy, Jy.T) - 0.5 * np.kron(Jy2, I) - 0.5 * np.kron(I, Jy2.T))
    return L


def cs_mixture_check(rho0, B: float, delta_t: float, p, n_samples: int, seed: int) -> MixtureReport:
    """Compare y-dephasing over ``delta_t`` with an average of random y-rotations.

    The channel side exponentiates the Liouvillian of
    -i gamma B [Jy, .] + gamma_y D[Jy] exactly.  The mixture side averages
    exp(-i w Jy dt) rho0 exp(i w Jy dt) over ``n_samples`` draws of
    w ~ N(gamma B, gamma_y / dt).  With gamma_y = 0 the mixture is the single
    rotation w = gamma B.
    """
    rates = SpinRates.from_params(p)
    rho0 = np.array(rho0, dtype=complex)
    ops = _ops_for(rho0)
    d = ops.dim
    gB, gy = rates.gamma * B, rates.gamma_y
    L = _dephasing_superop(ops, gB, gy)
    channel = (linalg.expm(L * delta_t) @ rho0.reshape(-1)).reshape(d, d)
    channel = 0.5 * (channel + channel.conj().T)

    m, U = _y_basis(ops)
    r_y = U.conj().T @ rho0 @ U
    dm = m[:, None] - m[None, :]
    if gy > 0:
        rng = make_rng(seed, 0, AUX_STREAM)
        w = gB + math.sqrt(gy / delta_t) * rng.standard_normal(int(n_samples))
    else:
        w = np.array([gB])
    # only 4J+1 distinct differences m - n occur
    diffs = np.arange(-(d - 1), d)
    ph = np.exp(-1j * np.outer(w * delta_t, diffs))
    mean = ph.mean(axis=0)
    var = ph.var(axis=0) if len(w) > 1 else np.zeros(len(diffs))
    idx = np.rint(dm).astype(int) + (d - 1)
    mix_y = r_y * mean[idx]
    mixture = U @ mix_y @ U.conj().T
    mixture = 0.5 * (mixture + mixture.conj().T)
    stderr = math.sqrt(float(np.sum(np.abs(r_y) ** 2 * var[idx])) / len(w))
    return MixtureReport(trace_distance(channel, mixture), stderr, channel, mixture)


class FieldAverageReport(NamedTuple):
    """Coherence decay from averaging unitary rotations over Wiener field paths.

    Per time: ``coherence`` is the Monte Carlo mean of exp(-i theta) with
    theta = gamma int_0^t B ds (the factor multiplying every Delta m = 1
    element in the Jy basis); ``exponent`` is -log Re(coherence) with
    standard error ``exponent_stderr``; ``predicted`` is
    gamma^2 q_B t^3 / 6.  ``state`` is the field-averaged state at the last
    time, ``state_predicted`` the same with the predicted decay applied.
    """

    times: np.ndarray
    coherence: np.ndarray
    exponent: np.ndarray
    exponent_stderr: np.ndarray
    predicted: np.ndarray
    state: np.ndarray
    state_predicted: np.ndarray


def field_average_check(rho0, ou: OuParams, p, t, n_traj: int, seed: int) -> FieldAverageReport:
    """Average the purely unitary field rotation over Wiener paths.

    Needs chi = 0 and no measurement or decoherence (M = gamma_alpha = 0),
    so ``p`` must be a :class:`SpinRates` with those rates at zero.
    """
    if ou.chi != 0:
        raise ConfigError("field_average_check needs a Wiener field (chi = 0)")
    rates = SpinRates.from_params(p)
    if rates.M or rates.gamma_x or rates.gamma_y or rates.gamma_z:
        raise ConfigError("field_average_check needs M = gamma_alpha = 0")
    rho0 = np.array(rho0, dtype=complex)
    ops = _ops_for(rho0)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t <= 0) or np.any(np.diff(t) <= 0):
        raise ConfigError("times must be positive and increasing")
    grid = np.concatenate([[0.0], t])
    B, I = sample_wiener_integral(ou.q_B, grid, seed, n_traj)
    theta = rates.gamma * I[:, 1:]
    c = np.exp(-1j * theta)
    coh = c.mean(axis=0)
    re = coh.real
    se_re = c.real.std(axis=0) / math.sqrt(n_traj)
    with np.errstate(divide="ignore", invalid="ignore"):
        expo = -np.log(re)
        expo_se = se_re / re
    pred = rates.gamma**2 * ou.q_B * t**3 / 6.0

    m, U = _y_basis(ops)
    d = ops.dim
    r_y = U.conj().T @ rho0 @ U
    dm = m[:, None] - m[None, :]
    diffs = np.arange(-(d - 1), d)
    ph = np.exp(-1j * np.outer(theta[:, -1], diffs)).mean(axis=0)
    idx = np.rint(dm).astype(int) + (d - 1)
    state = U @ (r_y * ph[idx]) @ U.conj().T
    state_pred = U @ (r_y * np.exp(-pred[-1] * dm**2)) @ U.conj().T
    return FieldAverageReport(t, coh, expo, expo_se, pred, state, state_pred)
