"""Exception types shared across the package."""

import numpy as np


class BglgmError(Exception):
    """Base class for package-specific failures."""


class DataValidationError(BglgmError, ValueError):
    """Input data violates a documented invariant."""


class ParseError(BglgmError, ValueError):
    """A text input could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigError(BglgmError, ValueError):
    """Run configuration is malformed or inconsistent."""


class SingularMatrixError(BglgmError, np.linalg.LinAlgError):
    """A matrix that must be positive definite failed its Cholesky factorization."""

    def __init__(self, message: str, minor: int | None = None):
        self.minor = minor
        super().__init__(message)
