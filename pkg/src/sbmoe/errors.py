"""Exception types shared across the package."""


class SbmoeError(Exception):
    """Base class for all package-specific errors."""


class NotPositiveDefinite(SbmoeError):
    """A matrix required to be positive definite failed its Cholesky factorization."""


class DimensionMismatch(SbmoeError):
    """Array shapes are inconsistent with each other or with the model."""


class DomainError(SbmoeError):
    """A scalar argument lies outside the mathematical domain of the operation."""


class DegenerateData(SbmoeError):
    """A data coordinate is constant where variability is required."""


class NonFiniteError(SbmoeError):
    """A NaN or infinity appeared where a finite value is required."""


class ContextMismatch(SbmoeError):
    """A conditioning context does not carry the latent values the generator needs."""


class DegenerateSamples(SbmoeError):
    """A sample set has zero variance along some axis."""


class GridMismatch(SbmoeError):
    """Two density grids do not share the same axes."""


class FingerprintMismatch(SbmoeError):
    """A model file does not match the dataset it is being used with."""


class ParseError(SbmoeError):
    """A CSV or config file could not be parsed; message carries location context."""


class ConfigError(SbmoeError):
    """Invalid configuration values."""
