"""Exception types shared across the package."""


class MagKalmanError(Exception):
    """Base class for package errors."""


class ConfigError(MagKalmanError):
    """Invalid parameters or configuration."""


class RegimeError(MagKalmanError):
    """Parameters fall outside the linear-Gaussian regime."""


class NumericError(MagKalmanError):
    """An integration diverged or produced non-finite values."""


class UnsupportedError(MagKalmanError):
    """A requested case has no implementation (e.g. missing closed form)."""
