"""Exception types shared across the package.

Validation errors map to CLI exit code 2, numerical failures to 3.
"""

from __future__ import annotations


class ValidationError(ValueError):
    """Bad sizes, malformed inputs, violated preconditions."""


class NumericalFailureError(RuntimeError):
    """A solver failed to converge or produced an unusable result."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message if residual is None else f"{message} (residual {residual:.3e})")
        self.residual = residual


class InstabilityError(NumericalFailureError):
    """Ion chain not transversally stable (imaginary mode frequency)."""


class DeflationError(NumericalFailureError):
    """Deflation weight too small: an energy fell below a previous one."""


class CalibrationError(NumericalFailureError):
    """Noise-rate moment matching found no solution in the valid region."""
