"""Continuous-measurement atomic magnetometry: Kalman filtering, precision
bounds and a small-J quantum oracle."""
from .errors import ConfigError, MagKalmanError, NumericError, RegimeError, UnsupportedError
from .params import INFINITE, OuParams, PhysParams, fold_gamma_z, validate_regime

__version__ = "0.1.0"

__all__ = [
    "INFINITE",
    "ConfigError",
    "MagKalmanError",
    "NumericError",
    "OuParams",
    "PhysParams",
    "RegimeError",
    "UnsupportedError",
    "__version__",
    "fold_gamma_z",
    "validate_regime",
]
