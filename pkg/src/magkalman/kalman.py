"""Correlated Kalman-Bucy filter for the field and the conditional J_z mean.

State x = (<J_z>_c, B).  The measurement record is
dy = 2 eta sqrt(M) <J_z>_c dt + sqrt(eta) dW, with the same dW driving the
J_z mean, so process and measurement noise are correlated.

The covariance obeys a stiff Riccati equation (rates reach ~1/t* which can
be 1e11 Hz).  It is integrated with an implicit Radau scheme in log-time,
after a short linear X/Y stage that also handles an improper prior.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.integrate import solve_ivp

from .errors import ConfigError, NumericError
from .moments import ConditionalTrajectory, variance_exact, variance_regimes
from .params import INFINITE, OuParams, PhysParams, is_infinite

__all__ = [
    "FilterRun",
    "FilterState",
    "StateSpaceModel",
    "SteadyState",
    "TransitionScales",
    "amse_noiseless",
    "amse_noiseless_asymptotes",
    "build_model",
    "filter_ensemble",
    "integrate_riccati",
    "kalman_gain",
    "riccati_rhs",
    "run_filter",
    "steady_state",
    "transition_scales",
]


@dataclass(frozen=True)
class StateSpaceModel:
    """Time-varying matrices of the linear model dx = F x dt + B dw, dy = H x dt + dv."""

    p: PhysParams
    ou: OuParams
    var_fn: Callable

    @property
    def h(self) -> float:
        # gain of <J_z>_c in the photocurrent
        return 2.0 * self.p.eta * math.sqrt(self.p.M)

    def f12(self, t):
        return -self.p.gamma * self.p.J * np.exp(-self.p.r * t / 2.0)

    def F(self, t) -> np.ndarray:
        return np.array([[0.0, self.f12(t)], [0.0, -self.ou.chi]])

    def Bmat(self, t) -> np.ndarray:
        return np.diag([2.0 * math.sqrt(self.p.eta * self.p.M) * float(self.var_fn(t)), 1.0])

    @property
    def H(self) -> np.ndarray:
        return np.array([[self.h, 0.0]])

    @property
    def Q(self) -> np.ndarray:
        return np.diag([1.0, self.ou.q_B])

    @property
    def R(self) -> float:
        return self.p.eta

    @property
    def S(self) -> np.ndarray:
        return np.array([[math.sqrt(self.p.eta)], [0.0]])

    def coeffs(self, t):
        """Scalar Riccati coefficients (c, f, g): A = [[-c, f], [0, -chi]], G = diag(g, 0)."""
        p = self.p
        c = 4.0 * p.eta * p.M * float(self.var_fn(t))
        return c, float(self.f12(t)), 4.0 * p.eta * p.M


def build_model(p: PhysParams, ou: OuParams, var_fn: Callable | None = None,
                long_time_var: bool = False) -> StateSpaceModel:
    """State-space model; the J_z variance defaults to the exact solution.

    ``long_time_var`` swaps in the long-time branch of the variance, as used
    in the steady-state derivation.
    """
    if p.gamma_z != 0:
        raise ConfigError("build_model expects folded parameters (gamma_z = 0)")
    if var_fn is None:
        if long_time_var:
            var_fn = variance_regimes(p).long_time
        else:
            def var_fn(t, _p=p):
                return variance_exact(t, _p)
    return StateSpaceModel(p, ou, var_fn)


def riccati_rhs(sigma: np.ndarray, t: float, m: StateSpaceModel) -> np.ndarray:
    """Right-hand side of the covariance Riccati equation."""
    F, B, H, Q, R, S = m.F(t), m.Bmat(t), m.H, m.Q, m.R, m.S
    A = F - B @ S @ H / R
    return (A @ sigma + sigma @ A.T - sigma @ H.T @ H @ sigma / R
            + B @ (Q - S @ S.T / R) @ B.T)


def _xy_stage(m, X0, Y0, t_a, rtol=1e-12):
    chi, qB = m.ou.chi, m.ou.q_B

    def rhs(t, u):
        X = u[:4].reshape(2, 2)
        Y = u[4:].reshape(2, 2)
        c, f, g = m.coeffs(t)
        A = np.array([[-c, f], [0.0, -chi]])
        G = np.diag([g, 0.0])
        Qe = np.diag([0.0, qB])
        return np.concatenate([(-A.T @ X + G @ Y).ravel(), (A @ Y + Qe @ X).ravel()])

    u0 = np.concatenate([X0.ravel(), Y0.ravel()])
    # c t_a <= 1 keeps the interval non-stiff, so an explicit scheme suffices
    sol = solve_ivp(rhs, (0.0, t_a), u0, method="DOP853", rtol=rtol, atol=1e-30,
                    first_step=t_a * 1e-6)
    if not sol.success:
        raise NumericError(f"X/Y stage failed: {sol.message}")
    X = sol.y[:4, -1].reshape(2, 2)
    Y = sol.y[4:, -1].reshape(2, 2)
    if abs(np.linalg.det(X)) < 1e-300 or not np.all(np.isfinite(X)):
        raise NumericError("X became singular; linearization degenerate")
    S = np.linalg.solve(X.T, Y.T).T  # Y X^{-1}
    return 0.5 * (S + S.T)


def _log_stage(m, S, s_a, s_eval, rtol):
    """Integrate (ln Sigma11, Sigma12/sqrt(Sigma11 Sigma22), ln Sigma22) in s = ln t.

    Between crossovers every entry of Sigma follows a power law in t, so
    these variables are close to linear in s and the solver takes long
    steps; positivity of the diagonal is built in.
    """
    chi, qB = m.ou.chi, m.ou.q_B

    def rhs(s, u):
        t = math.exp(s)
        a, rho, b = u
        c, f, g = m.coeffs(t)
        # E = sqrt(z/x), W = q_B/z; the c and chi terms cancel in d rho
        E, x, W = math.exp(0.5 * (b - a)), math.exp(a), qB * math.exp(-b)
        one = 1.0 - rho * rho
        return t * np.array([-2.0 * c + 2.0 * f * rho * E - g * x,
                             f * E * one - 0.5 * g * x * rho * one - 0.5 * rho * W,
                             -2.0 * chi - g * rho * rho * x + W])

    u0 = [math.log(S[0, 0]), S[0, 1] / math.sqrt(S[0, 0] * S[1, 1]), math.log(S[1, 1])]
    sol = solve_ivp(rhs, (s_a, s_eval[-1]), u0, method="Radau", t_eval=s_eval,
                    rtol=rtol, atol=rtol * 1e-2, first_step=1e-3)
    if not sol.success or not np.all(np.isfinite(sol.y)):
        raise NumericError(f"Riccati integration failed: {sol.message}")
    a, rho, b = sol.y
    x, z = np.exp(a), np.exp(b)
    return x, rho * np.sqrt(x * z), z


def _direct_stage(m, S, s_a, s_eval, rtol):
    """Integrate the three covariance entries themselves in s = ln t."""
    chi, qB = m.ou.chi, m.ou.q_B

    def rhs(s, u):
        t = math.exp(s)
        x, y, z = u
        c, f, g = m.coeffs(t)
        return t * np.array([2.0 * (-c * x + f * y) - g * x * x,
                             -c * y + f * z - chi * y - g * x * y,
                             -2.0 * chi * z - g * y * y + qB])

    def jac(s, u):
        t = math.exp(s)
        x, y, z = u
        c, f, g = m.coeffs(t)
        return t * np.array([[-2.0 * c - 2.0 * g * x, 2.0 * f, 0.0],
                             [-g * y, -c - chi - g * x, f],
                             [0.0, -2.0 * g * y, -2.0 * chi]])

    sol = solve_ivp(rhs, (s_a, s_eval[-1]), [S[0, 0], S[0, 1], S[1, 1]], method="Radau",
                    jac=jac, t_eval=s_eval, rtol=rtol, atol=1e-300, first_step=1e-6)
    if not sol.success or not np.all(np.isfinite(sol.y)):
        raise NumericError(f"Riccati integration failed: {sol.message}")
    return sol.y


def integrate_riccati(sigma0, t_grid, m: StateSpaceModel, rtol: float = 1e-9) -> np.ndarray:
    """Filter covariance on ``t_grid`` (increasing, starting at or after 0).

    ``sigma0`` is a 2x2 initial covariance or ``INFINITE`` for an improper
    field prior (Sigma_0 = diag(0, inf)).  Returns an array (n, 2, 2); an
    improper prior gives an infinite (2,2) entry at t = 0.

    A linear X/Y system (Sigma = Y X^{-1}) is integrated over a short
    initial interval; for the improper prior it starts from X0 = diag(1, 0),
    Y0 = diag(0, 1).  The rest is integrated in s = ln t with an implicit
    (Radau) scheme, in log-variables when the diagonal is positive.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t_grid) <= 0) or t_grid[0] < 0:
        raise ConfigError("t_grid must be increasing and non-negative")
    if is_infinite(sigma0):
        X0, Y0 = np.diag([1.0, 0.0]), np.diag([0.0, 1.0])
        s_at0 = np.diag([0.0, np.inf])
    else:
        s0 = np.asarray(sigma0, dtype=float)
        X0, Y0 = np.eye(2), s0.copy()
        s_at0 = s0
    out = np.empty((len(t_grid), 2, 2))
    pos = t_grid > 0
    out[~pos] = s_at0
    if not np.any(pos):
        return out
    tp = t_grid[pos]
    c0 = m.coeffs(0.0)[0]
    t_a = min(1e-3 * tp[0], 1.0 / c0 if c0 > 0 else np.inf)
    S = _xy_stage(m, X0, Y0, t_a, min(rtol, 1e-10))
    s_eval = np.log(tp)
    s_a = math.log(t_a)
    if S[0, 0] > 0 and S[1, 1] > 0:
        x, y, z = _log_stage(m, S, s_a, s_eval, rtol)
    else:
        x, y, z = _direct_stage(m, S, s_a, s_eval, rtol)
    out[pos, 0, 0] = x
    out[pos, 0, 1] = out[pos, 1, 0] = y
    out[pos, 1, 1] = z
    return out


def _noiseless_denominator(u, J, eta):
    """a e^{-u} + 4(1 + 4 J eta) e^{-u/2} + c(u) with u = M t (improper prior).

    Leading orders cancel to O(u^3); small u uses the Taylor series.
    """
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    small = u < 1.0
    if np.any(~small):
        v = u[~small]
        out[~small] = (-(1.0 + 2.0 * eta * J * (4.0 + v)) * np.exp(-v)
                       + 4.0 * (1.0 + 4.0 * J * eta) * np.exp(-v / 2.0)
                       + (v - 3.0) + 2.0 * eta * J * (v - 4.0))
    if np.any(small):
        v = u[small]
        d0 = np.zeros_like(v)
        d1 = np.zeros_like(v)
        fact = 1.0
        for n in range(1, 40):
            fact *= n
            vn = v**n
            if n >= 3:
                d0 += ((-1.0) ** (n + 1) + 4.0 * (-0.5) ** n) / fact * vn
            if n >= 4:
                d1 += (-4.0 * (-1.0) ** n / fact - (-1.0) ** (n - 1) * n / fact
                       + 8.0 * (-0.5) ** n / fact) * vn
        out[small] = d0 + 2.0 * eta * J * d1
    return out


def amse_noiseless(t, sigma0_sq, p: PhysParams):
    """Minimal field aMSE without decoherence or fluctuations (closed form)."""
    t = np.asarray(t, dtype=float)
    M, J, eta, g = p.M, p.J, p.eta, p.gamma
    u = M * t
    den = _noiseless_denominator(u, J, eta)
    if not is_infinite(sigma0_sq):
        if sigma0_sq == 0:
            return np.zeros_like(t)
        den = den + M**2 / (16.0 * eta * g**2 * J**2 * sigma0_sq) + M**3 * t / (8.0 * g**2 * J * sigma0_sq)
    with np.errstate(divide="ignore"):
        return M**2 / (16.0 * eta * g**2 * J**2) * (1.0 + 2.0 * J * M * t * eta) / den


def amse_noiseless_asymptotes(t, p: PhysParams):
    """Short- and intermediate-time branches of the noiseless aMSE (improper prior).

    3/(4 eta M gamma^2 J^2 t^3) for t << 1/(J M) and four times that for
    1/(J M) << t < 1/M.
    """
    t = np.asarray(t, dtype=float)
    base = 3.0 / (p.eta * p.M * p.gamma**2 * p.J**2 * t**3)
    return base / 4.0, base


def kalman_gain(sigma: np.ndarray, t: float, m: StateSpaceModel) -> np.ndarray:
    """Gain (Sigma H^T + B S) / R as a length-2 vector."""
    if m.R == 0:
        raise ConfigError("eta = 0: the record carries no information")
    return ((sigma @ m.H.T + m.Bmat(t) @ m.S) / m.R).ravel()


@dataclass(frozen=True)
class FilterState:
    estimate: np.ndarray
    cov: np.ndarray
    t: float


@dataclass(frozen=True)
class FilterRun:
    times: np.ndarray
    estimates: np.ndarray  # (n, 2): <J_z>_c estimate and field estimate
    cov: np.ndarray

    def states(self) -> list[FilterState]:
        return [FilterState(e, c, t) for e, c, t in zip(self.estimates, self.cov, self.times)]

    @property
    def B_hat(self):
        return self.estimates[:, 1]


def run_filter(record: ConditionalTrajectory, m: StateSpaceModel, sigma_path: np.ndarray,
               prior_mean: float | None = None) -> FilterRun:
    """Euler discretization of the Kalman-Bucy filter on the record's grid."""
    times = record.times
    if sigma_path.shape != (len(times), 2, 2):
        raise ConfigError("sigma_path does not match the record's time grid")
    B0 = m.ou.B0 if prior_mean is None else prior_mean
    x = np.array([0.0, B0])
    est = np.empty((len(times), 2))
    est[0] = x
    H = m.H
    for j in range(len(times) - 1):
        t = times[j]
        dt = times[j + 1] - t
        G = kalman_gain(sigma_path[j], t, m)
        x = x + m.F(t) @ x * dt + G * (record.y_increments[j] - (H @ x)[0] * dt)
        est[j + 1] = x
    return FilterRun(times, est, sigma_path)


def filter_ensemble(p: PhysParams, ou: OuParams, times, n_traj: int, seed: int,
                    sample_idx, m: StateSpaceModel | None = None, sigma_path=None,
                    start: int = 0, block: int = 4096):
    """Simulate truth, records and filter for many trajectories at once.

    The field starts from its (proper) prior and follows the exact OU
    transition law; the conditional moments follow the Euler-Maruyama scheme
    of :func:`integrate_conditional` and the filter the scheme of
    :func:`run_filter`, vectorized over trajectories.  Trajectory i uses the
    random streams of index ``start + i``, drawn in blocks of ``block`` steps
    so memory stays bounded on long grids.  Returns the field errors
    B - B_hat at ``sample_idx``, shape (n_traj, len(sample_idx)), and the
    covariance path.
    """
    from .stochproc import (FIELD_STREAM, MEASUREMENT_STREAM, _initial_value,
                            _transition_var, make_rng)

    if is_infinite(ou.sigma0_sq):
        raise ConfigError("an ensemble run needs a proper prior to draw the initial field")
    times = np.asarray(times, dtype=float)
    m = build_model(p, ou) if m is None else m
    if sigma_path is None:
        sigma_path = integrate_riccati(np.diag([0.0, ou.sigma0_sq]), times, m)
    n = len(times) - 1
    h = np.diff(times)
    decay = np.exp(-ou.chi * h)
    sd = np.sqrt(_transition_var(ou.chi, ou.q_B, h))
    f_rng = [make_rng(seed, start + i, FIELD_STREAM) for i in range(n_traj)]
    m_rng = [make_rng(seed, start + i, MEASUREMENT_STREAM) for i in range(n_traj)]
    Bt = np.array([_initial_value(ou, g) for g in f_rng], dtype=float)

    gJ, r, Me = p.gamma * p.J, p.r, p.M * p.eta
    meas = 2.0 * math.sqrt(p.eta * p.M)
    rec = m.h
    sq_eta = math.sqrt(p.eta)
    jz = np.zeros(n_traj)
    var = p.J / 2.0
    xj = np.zeros(n_traj)
    xb = np.full(n_traj, ou.B0)
    sample_idx = np.asarray(sample_idx)
    want = {int(k): i for i, k in enumerate(sample_idx)}
    err = np.empty((n_traj, len(sample_idx)))
    if 0 in want:
        err[:, want[0]] = Bt - xb
    for b0 in range(0, n, block):
        nb = min(block, n - b0)
        zf = np.stack([g.standard_normal(nb) for g in f_rng])
        zm = np.stack([g.standard_normal(nb) for g in m_rng])
        for k in range(nb):
            j = b0 + k
            t = times[j]
            e = math.exp(-r * t / 2.0)
            dW = zm[:, k] * math.sqrt(h[j])
            dy = rec * jz * h[j] + sq_eta * dW
            G = kalman_gain(sigma_path[j], t, m)
            f12 = -gJ * e
            innov = dy - rec * xj * h[j]
            xj_new = xj + f12 * xb * h[j] + G[0] * innov
            xb = xb - ou.chi * xb * h[j] + G[1] * innov
            xj = xj_new
            jz = jz + f12 * Bt * h[j] + meas * var * dW
            var = var + (-4.0 * Me * var * var + p.gamma_y * p.J**2 * e * e) * h[j]
            Bt = decay[j] * Bt + sd[j] * zf[:, k]
            if j + 1 in want:
                err[:, want[j + 1]] = Bt - xb
    if not np.all(np.isfinite(err)):
        raise NumericError("filter ensemble produced non-finite errors")
    return err, sigma_path


class SteadyState(NamedTuple):
    value: float
    large_J: float


def steady_state(p: PhysParams, ou: OuParams, t) -> SteadyState:
    """Steady-state field error of the filter (algebraic Riccati solution).

    Uses the long-time branch of the J_z variance.  For chi = 0 the closed
    form reduces to sqrt(q_B gamma_y / gamma^2 + sqrt(q_B^3/(M eta)) e^{rt/2} / (gamma J)).
    """
    if not (p.gamma_y > 0 and p.M > 0 and p.eta > 0):
        if p.gamma_y == 0 and ou.chi == 0:
            t = np.asarray(t, dtype=float)
            r = p.M + p.gamma_y
            v = np.sqrt(np.sqrt(ou.q_B**3 / (p.M * p.eta)) * np.exp(r * t / 2.0) / (p.gamma * p.J))
            return SteadyState(v, np.zeros_like(v))
        raise ConfigError("steady state needs gamma_y, M, eta > 0")
    t = np.asarray(t, dtype=float)
    g, J, M, eta, gy, qB, chi = p.gamma, p.J, p.M, p.eta, p.gamma_y, ou.q_B, ou.chi
    r = M + gy
    e1 = np.exp(r * t / 2.0)
    w = math.sqrt(qB * g * g + gy * chi * chi)
    large = -gy * chi / g**2 + gy / g**2 * math.sqrt((qB * g * g + gy * chi * chi) / gy)
    if chi == 0:
        v = np.sqrt(qB * gy / g**2 + np.sqrt(qB**3 / (M * eta)) * e1 / (g * J))
        return SteadyState(v, np.full_like(v, large))
    Me = M * eta
    root = np.sqrt(chi**2 * e1**2 + 4.0 * J * (gy * J * Me + e1 * math.sqrt(Me) * w))
    v = (-gy * chi / g**2 - chi**3 * e1**2 / (4.0 * g**2 * J**2 * Me)
         - chi * w * e1 / (g**2 * J * math.sqrt(Me))
         + w / (2.0 * g**2 * J * Me) * (math.sqrt(Me) + chi**2 * e1 / (2.0 * J * w)) * root)
    return SteadyState(v, np.full_like(v, large))


class TransitionScales(NamedTuple):
    t_CS: float
    t_CS_prime: float
    t_SS: float
    J_CS: float
    J_CS_prime: float
    J_SS: float


def transition_scales(p: PhysParams, ou: OuParams, t: float) -> TransitionScales:
    """Crossover times (at fixed J) and ensemble sizes (at fixed t)."""
    g, J, Me, gy, qB = p.gamma, p.J, p.M * p.eta, p.gamma_y, ou.q_B
    with np.errstate(divide="ignore"):
        inf = math.inf
        t_cs = math.sqrt(3.0 / (Me * gy)) / J if gy > 0 else inf
        t_csp = math.sqrt(gy / qB) / g if qB > 0 else inf
        # crossing of the noiseless and small-J steady-state errors; inverse of J_SS
        t_ss = 3.0 ** (1.0 / 3.0) / math.sqrt(g * J * math.sqrt(Me * qB)) if qB > 0 else inf
        j_cs = math.sqrt(3.0 / (Me * gy)) / t if gy > 0 else inf
        j_csp = g / gy * math.sqrt(qB / Me) if gy > 0 else inf
        j_ss = 3.0 ** (2.0 / 3.0) / (g * t * t * math.sqrt(Me * qB)) if qB > 0 else inf
    return TransitionScales(t_cs, t_csp, t_ss, j_cs, j_csp, j_ss)
