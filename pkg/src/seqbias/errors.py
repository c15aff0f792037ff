"""Exception types shared across the package."""


class SeqBiasError(Exception):
    """Base class for all package-specific errors."""


class DimensionMismatchError(SeqBiasError, ValueError):
    """Two distributions (or tensors) with incompatible shapes were combined."""


class EnumerationCapError(SeqBiasError, ValueError):
    """Exact enumeration would exceed the configured state cap.

    Use the Monte-Carlo estimators instead.
    """


class DegenerateRatioError(SeqBiasError, ArithmeticError):
    """Both numerator and denominator of a deviation ratio are below epsilon."""


class SerializationError(SeqBiasError, ValueError):
    """Model payload is corrupt, truncated, or has an unsupported version."""


class ConfigError(SeqBiasError, ValueError):
    """Experiment configuration is missing, inconsistent, or malformed."""
