"""Exception hierarchy shared by every module of the package."""


class CoarseLoftrError(Exception):
    """Base class for all package errors."""


class DimensionError(CoarseLoftrError, ValueError):
    """Tensor shapes or image sizes are incompatible."""


class ContractError(CoarseLoftrError, ValueError):
    """A precondition of an operation was violated by the caller."""


class ConfigError(CoarseLoftrError, ValueError):
    """Invalid hyperparameter or configuration file."""


class NumericError(CoarseLoftrError, FloatingPointError):
    """A NaN or Inf appeared where finite values are required."""


class FormatError(CoarseLoftrError, ValueError):
    """Malformed or unsupported file content."""


class DatasetError(CoarseLoftrError, LookupError):
    """Dataset layout is incomplete or a referenced item is missing."""


class InvalidDepthError(ContractError):
    """Depth value is not strictly positive."""


class BehindCameraError(CoarseLoftrError, ValueError):
    """A point projects from behind (or onto) the camera plane."""


class ValidationError(CoarseLoftrError, ValueError):
    """Loaded parameters fail a semantic check (e.g. non-orthonormal rotation)."""
