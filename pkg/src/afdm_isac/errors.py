"""Exception types raised across the package."""


class AfdmError(ValueError):
    """Base class for invalid inputs to the AFDM sensing chain."""


class DiversityError(AfdmError):
    """Delay/Doppler window too large for full diversity at this N."""


class PrefixTooShortError(AfdmError):
    """Chirp-periodic prefix shorter than the maximum delay."""


class DimensionError(AfdmError):
    """Vector or frame length does not match the configuration."""


class OutOfWindowError(AfdmError):
    """Target delay or Doppler outside the unambiguous window."""


class GridError(AfdmError):
    """Invalid virtual grid resolution or oversized dictionary."""


class ConditioningError(ArithmeticError):
    """Posterior precision matrix lost positive definiteness."""


class DivergenceError(ArithmeticError):
    """Noise precision update hit a nonpositive denominator."""


class RangeQuantizationWarning(UserWarning):
    """Target range was rounded onto the integer delay grid."""
