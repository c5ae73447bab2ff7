"""Exception types shared across the package."""

from __future__ import annotations


class LumpkitError(Exception):
    """Base class for all errors raised by lumpkit."""


class ModelSyntaxError(LumpkitError):
    """Malformed model text.

    Carries the 1-based line and column of the offending token when known.
    """

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        if line is not None and column is not None:
            message = f"line {line}, column {column}: {message}"
        elif line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ModelValidationError(LumpkitError):
    """Structurally valid model text that violates a semantic requirement,
    e.g. a rank-deficient observable matrix or a non-positive horizon."""


class EvaluationError(LumpkitError):
    """Drift evaluation hit a division by an exactly zero denominator.

    Distinct from overflow: infinities propagate silently, a zero denominator
    does not.
    """

    def __init__(self, message: str, component: int | None = None, point=None):
        self.component = component
        self.point = point
        super().__init__(message)


class SamplingError(LumpkitError):
    """Random sampling failed repeatedly, e.g. every draw hit a singular point."""


class RankDeficiencyError(LumpkitError):
    """A matrix that must have full row rank does not."""


class PseudoinverseError(LumpkitError):
    """A claimed pseudoinverse pair failed the L @ Lbar = I check, or rows
    that must be orthonormal are not."""


class DimensionMismatchError(LumpkitError):
    """Operands with incompatible shapes."""


class IntegrationError(LumpkitError):
    """The ODE solver could not finish: step underflow (stiffness suspected),
    step budget exhausted, or a drift evaluation failure along the way."""

    def __init__(self, message: str, time_reached: float | None = None):
        self.time_reached = time_reached
        super().__init__(message)


class ConvergenceError(LumpkitError):
    """An iterative search exceeded its iteration budget."""


class MonotonicityError(LumpkitError):
    """A tolerance sweep produced a reduction size that grew with the
    tolerance; reported rather than silently accepted."""
