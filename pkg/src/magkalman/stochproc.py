"""Field trajectories (Ornstein-Uhlenbeck / Wiener) and time-average statistics."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .params import OuParams, PhysParams, is_infinite

__all__ = [
    "FIELD_STREAM",
    "MEASUREMENT_STREAM",
    "FieldTrajectory",
    "GaussianLaw",
    "make_rng",
    "ou_transition_law",
    "simulate_ou",
    "simulate_ou_batch",
    "sample_wiener_integral",
    "time_average_stats",
    "validity_horizon",
]

FIELD_STREAM = 0
MEASUREMENT_STREAM = 1
AUX_STREAM = 2

_SERIES_CUTOFF = 1e-6
_VAR_SERIES_CUTOFF = 0.5


def make_rng(seed: int, index: int = 0, stream: int = FIELD_STREAM) -> np.random.Generator:
    """Counter-based generator for substream ``stream`` of trajectory ``index``.

    Each (seed, index, stream) triple gets an independent Philox stream, so
    results do not depend on how trajectories are distributed over workers.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index), int(stream)))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class GaussianLaw:
    mean: float
    variance: float

    @property
    def std(self):
        return math.sqrt(self.variance)


@dataclass(frozen=True)
class FieldTrajectory:
    """Sampled field path B_j on the grid ``times`` (uniform spacing ``dt``
    unless built on an explicit grid, in which case ``dt`` is the first step)."""

    dt: float
    values: np.ndarray
    seed: int
    ou: OuParams
    times: np.ndarray
    index: int = 0

    def __len__(self):
        return len(self.values)


def _transition_var(chi, q_B, dt):
    dt = np.asarray(dt, dtype=float)
    x = chi * dt
    # (q_B / 2 chi)(1 - e^{-2 chi dt}) with a small-x series
    small = x < _SERIES_CUTOFF
    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.where(small, q_B * dt * (1.0 - x),
                     q_B * (-np.expm1(-2.0 * x)) / (2.0 * chi if chi > 0 else 1.0))
    return v


def ou_transition_law(B_prev: float, dt: float, ou: OuParams) -> GaussianLaw:
    """Exact law of B_{t+dt} given B_t = B_prev."""
    if dt < 0:
        raise ValueError("dt must be >= 0")
    mean = B_prev * math.exp(-ou.chi * dt)
    return GaussianLaw(mean, float(_transition_var(ou.chi, ou.q_B, dt)))


def _initial_value(ou: OuParams, rng, size=None):
    if is_infinite(ou.sigma0_sq) or ou.sigma0_sq == 0:
        # an improper prior has nothing to sample from; start at B0
        return np.full(size, ou.B0) if size is not None else ou.B0
    return ou.B0 + math.sqrt(ou.sigma0_sq) * rng.standard_normal(size)


def _sample_path(ou, times, rng, B_start=None):
    steps = np.diff(times)
    decay = np.exp(-ou.chi * steps)
    sd = np.sqrt(_transition_var(ou.chi, ou.q_B, steps))
    out = np.empty(len(times))
    # initial draw first, as in simulate_ou_batch and filter_ensemble
    out[0] = _initial_value(ou, rng) if B_start is None else B_start
    z = rng.standard_normal(len(steps))
    for j in range(len(steps)):
        out[j + 1] = decay[j] * out[j] + sd[j] * z[j]
    return out


def simulate_ou(ou: OuParams, dt: float, n_steps: int, seed: int,
                index: int = 0, times=None) -> FieldTrajectory:
    """Sample one field path with the exact Gaussian transition law.

    Either a uniform grid (``dt``, ``n_steps``) or an explicit increasing
    ``times`` array may be given.
    """
    if times is None:
        if not dt > 0:
            raise ValueError("dt must be positive")
        times = dt * np.arange(n_steps + 1)
    else:
        times = np.asarray(times, dtype=float)
        if np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        dt = float(times[1] - times[0]) if len(times) > 1 else float(dt or 0.0)
    rng = make_rng(seed, index, FIELD_STREAM)
    return FieldTrajectory(dt=float(dt), values=_sample_path(ou, times, rng),
                           seed=int(seed), ou=ou, times=times, index=int(index))


def simulate_ou_batch(ou: OuParams, times, seed: int, n_traj: int,
                      start: int = 0, B_start=None) -> np.ndarray:
    """Field paths for trajectory indices start..start+n_traj-1, shape (n, len(times)).

    Row i equals ``simulate_ou(..., index=start+i).values``; the batch form
    vectorizes the recursion across trajectories.
    """
    times = np.asarray(times, dtype=float)
    steps = np.diff(times)
    decay = np.exp(-ou.chi * steps)
    sd = np.sqrt(_transition_var(ou.chi, ou.q_B, steps))
    z = np.empty((n_traj, len(steps)))
    b0 = np.empty(n_traj)
    for i in range(n_traj):
        rng = make_rng(seed, start + i, FIELD_STREAM)
        b0[i] = _initial_value(ou, rng) if B_start is None else B_start[i]
        z[i] = rng.standard_normal(len(steps))
    out = np.empty((n_traj, len(times)))
    out[:, 0] = b0
    for j in range(len(steps)):
        out[:, j + 1] = decay[j] * out[:, j] + sd[j] * z[:, j]
    return out


def sample_wiener_integral(q_B: float, times, seed: int, n_traj: int, start: int = 0):
    """Exact joint samples of B_t and int_0^t B ds for a Wiener field from B_0 = 0.

    Each step of length h draws the pair (increment of B, integral of the
    increment process over the step) from its exact covariance
    q_B [[h, h^2/2], [h^2/2, h^3/3]], so the integral carries no quadrature
    error on any grid.  ``times`` must start at 0 and increase.  Returns
    ``(B, I)``, each of shape (n_traj, len(times)).
    """
    times = np.asarray(times, dtype=float)
    if times[0] != 0 or np.any(np.diff(times) <= 0):
        raise ValueError("times must start at 0 and be strictly increasing")
    h = np.diff(times)
    n = len(h)
    z = np.empty((n_traj, n, 2))
    for i in range(n_traj):
        z[i] = make_rng(seed, start + i, FIELD_STREAM).standard_normal((n, 2))
    sq = math.sqrt(q_B)
    # Cholesky factor of the step covariance
    dB = sq * np.sqrt(h) * z[:, :, 0]
    dI = sq * h**1.5 * (z[:, :, 0] / 2.0 + z[:, :, 1] / (2.0 * math.sqrt(3.0)))
    B = np.zeros((n_traj, n + 1))
    B[:, 1:] = np.cumsum(dB, axis=1)
    I = np.zeros((n_traj, n + 1))
    I[:, 1:] = np.cumsum(B[:, :-1] * h + dI, axis=1)
    return B, I


def time_average_stats(ou: OuParams, t: float, B0: float | None = None) -> GaussianLaw:
    """Mean and variance of the time-averaged field (1/t) int_0^t B ds.

    The path starts from a known value ``B0`` (defaults to ``ou.B0``).  The
    variance is that of the OU integral and does not depend on ``B0``.
    """
    if not t > 0:
        raise ValueError("t must be positive")
    B0 = ou.B0 if B0 is None else B0
    chi, q = ou.chi, ou.q_B
    x = chi * t
    if x < _SERIES_CUTOFF:
        mean = B0 * (1.0 - x / 2.0 + x * x / 6.0)
    else:
        mean = B0 * (-math.expm1(-x)) / x
    if x < _VAR_SERIES_CUTOFF:
        # 4e^{-x} + 2x - e^{-2x} - 3 = sum_{n>=3} (4(-1)^n - (-2)^n) x^n / n!
        # cancels to O(x^3); sum the series divided by x^3
        s, term = 0.0, 1.0 / 6.0
        for n in range(3, 40):
            s += (4.0 * (-1.0) ** n - (-2.0) ** n) * term
            term *= x / (n + 1)
        var = q * t * s / 2.0
    else:
        var = q * (4.0 * math.exp(-x) + 2.0 * x - math.exp(-2.0 * x) - 3.0) / (2.0 * chi**3 * t * t)
    return GaussianLaw(mean, var)


def validity_horizon(ou: OuParams, p: PhysParams) -> float:
    """Longest time for which the linear-Gaussian description is trusted."""
    cands = [1.0 / (p.M + p.gamma_y)]
    if ou.chi > 0:
        cands.append(4.0 / (3.0 * ou.chi))
    if ou.q_B > 0:
        cands.append((3.0 / (4.0 * p.gamma**2 * ou.q_B)) ** (1.0 / 3.0))
    return min(cands)
