"""Exception hierarchy shared by every ospr module."""


class OsprError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class DimensionError(OsprError, ValueError):
    """Array shapes are unsupported or do not match."""


class UnsupportedFormatError(OsprError):
    """Image file is not an 8-bit grayscale PGM (P5) or PNG."""

    exit_code = 2


class ZeroImageError(OsprError, ValueError):
    """Target image carries no energy."""


class ConfigError(OsprError, ValueError):
    """Invalid experiment configuration."""


class NonConvergenceError(OsprError, RuntimeError):
    """Numerical quadrature or root finding failed to reach tolerance."""

    exit_code = 3
