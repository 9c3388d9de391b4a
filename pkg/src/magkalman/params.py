"""Parameter records, unit conventions and linear-Gaussian regime checks.

Units throughout the package: seconds, Gauss, Hz.  The gyromagnetic ratio
is stored in Hz/G, so 1 kHz/mG is ``1e6``.  The field-fluctuation strength
``q_B`` is in G^2/s and all squared field errors are in G^2.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .errors import ConfigError

__all__ = [
    "INFINITE",
    "MARGIN_FACTOR",
    "OuParams",
    "PhysParams",
    "RegimeReport",
    "fold_gamma_z",
    "is_infinite",
    "rescaled_time",
    "validate_regime",
]

#: safety factor used to turn a strict "much less than" into a test
MARGIN_FACTOR = 10.0


class _Infinite:
    """Sentinel for an improper (infinitely wide) prior variance."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "INFINITE"

    def __reduce__(self):
        return (_Infinite, ())


INFINITE = _Infinite()


def is_infinite(x) -> bool:
    return x is INFINITE


@dataclass(frozen=True)
class PhysParams:
    """Atomic ensemble, probe and decoherence parameters.

    Parameters
    ----------
    J : float
        Half the atom number, J = N/2.
    gamma : float
        Gyromagnetic ratio in Hz/G.
    M : float
        Measurement strength in Hz.
    eta : float
        Detection efficiency in [0, 1].
    gamma_x, gamma_y, gamma_z : float
        Collective decoherence rates in Hz.
    record_scale : float
        Factor by which measurement records must be multiplied after
        folding ``gamma_z`` into the measurement (1 if never folded).
    """

    J: float
    gamma: float = 1e6
    M: float = 1e5
    eta: float = 1.0
    gamma_x: float = 0.0
    gamma_y: float = 0.0
    gamma_z: float = 0.0
    record_scale: float = 1.0

    def __post_init__(self):
        vals = (self.J, self.gamma, self.M, self.eta, self.gamma_x,
                self.gamma_y, self.gamma_z, self.record_scale)
        if not all(math.isfinite(v) for v in vals):
            raise ConfigError("PhysParams: all fields must be finite")
        if self.J < 1:
            raise ConfigError(f"PhysParams.J: need J >= 1, got {self.J}")
        if self.gamma <= 0:
            raise ConfigError("PhysParams.gamma: must be positive")
        if self.M <= 0:
            raise ConfigError("PhysParams.M: must be positive")
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigError("PhysParams.eta: must lie in [0, 1]")
        for name in ("gamma_x", "gamma_y", "gamma_z"):
            if getattr(self, name) < 0:
                raise ConfigError(f"PhysParams.{name}: must be >= 0")

    @property
    def r(self) -> float:
        """Decay rate of the mean spin, M + gamma_y + gamma_z."""
        return self.M + self.gamma_y + self.gamma_z


@dataclass(frozen=True)
class OuParams:
    """Ornstein-Uhlenbeck field process dB = -chi B dt + sqrt(q_B) dW_B."""

    chi: float = 0.0
    q_B: float = 0.0
    sigma0_sq: object = INFINITE
    B0: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.chi) and self.chi >= 0):
            raise ConfigError("OuParams.chi: must be finite and >= 0")
        if not (math.isfinite(self.q_B) and self.q_B >= 0):
            raise ConfigError("OuParams.q_B: must be finite and >= 0")
        if not is_infinite(self.sigma0_sq):
            s = float(self.sigma0_sq)
            if not (math.isfinite(s) and s >= 0):
                raise ConfigError("OuParams.sigma0_sq: must be >= 0 or INFINITE")
            object.__setattr__(self, "sigma0_sq", s)
        if not math.isfinite(self.B0):
            raise ConfigError("OuParams.B0: must be finite")


@dataclass(frozen=True)
class RegimeReport:
    r: float
    chi_ok: bool
    qB_ok: bool
    time_ok: bool
    margins: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.chi_ok and self.qB_ok and self.time_ok


def validate_regime(p: PhysParams, ou: OuParams, t_max: float,
                    margin_factor: float = MARGIN_FACTOR) -> RegimeReport:
    """Check the three validity conditions of the linear-Gaussian model.

    ``chi`` must sit a factor ``margin_factor`` below 4r/3, ``q_B`` must not
    exceed 3 r^3 / (4 gamma^2) and the horizon must satisfy r t_max <= 1.
    Margins are the ratio of each quantity to its bound (<= 1 passes,
    strictly < 1 for chi).
    """
    if not t_max > 0:
        raise ConfigError("t_max must be positive")
    r = p.r
    chi_bound = 4.0 * r / (3.0 * margin_factor)
    qB_bound = 3.0 * r**3 / (4.0 * p.gamma**2)
    margins = {
        "chi": ou.chi / chi_bound,
        "q_B": ou.q_B / qB_bound,
        "time": r * t_max,
    }
    # small slack so that t_max = 1/r passes despite rounding
    return RegimeReport(
        r=r,
        chi_ok=ou.chi < chi_bound,
        qB_ok=ou.q_B <= qB_bound,
        time_ok=r * t_max <= 1.0 + 1e-12,
        margins=margins,
    )


def fold_gamma_z(p: PhysParams) -> PhysParams:
    """Absorb the z-dephasing rate into a reparameterized measurement.

    M -> M - gamma_z, eta -> eta M / (M - gamma_z); records must then be
    rescaled by sqrt(M / (M - gamma_z)), which is accumulated in
    ``record_scale``.
    """
    if p.gamma_z == 0:
        return p
    if p.M <= p.gamma_z:
        raise ConfigError(
            f"cannot fold gamma_z={p.gamma_z} into M={p.M}: need M > gamma_z")
    M_new = p.M - p.gamma_z
    eta_new = p.eta * p.M / M_new
    if eta_new > 1.0 + 1e-12:
        raise ConfigError(
            f"folding gamma_z gives efficiency {eta_new:.6g} > 1")
    return replace(p, M=M_new, eta=min(eta_new, 1.0), gamma_z=0.0,
                   record_scale=p.record_scale * math.sqrt(p.M / M_new))


def rescaled_time(t, p: PhysParams):
    """Dimensionless time t_S = (M + gamma_y) t, evaluated after folding."""
    q = fold_gamma_z(p)
    return (q.M + q.gamma_y) * t
