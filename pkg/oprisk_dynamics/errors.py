"""Exception hierarchy for oprisk-dynamics."""

from typing import Optional

from .oprisk_constants import EXIT_STATUS, ErrorCategory


class OpRiskError(Exception):
    """Base class for every failure raised by the engine.

    Args:
        message: Human-readable description
        quantity: Optional tag of the estimated quantity, e.g. ``"theta[2]"``
    """

    category = ErrorCategory.PARAMETER

    def __init__(self, message: str, quantity: Optional[str] = None):
        """Initialize the error with an optional quantity tag."""
        if quantity:
            message = f"{quantity}: {message}"
        super().__init__(message)
        self.quantity = quantity

    @property
    def exit_status(self) -> int:
        """Exit status the CLI uses for this error."""
        return EXIT_STATUS[self.category]


class ParameterError(OpRiskError, ValueError):
    """An argument is outside its documented domain."""

    category = ErrorCategory.PARAMETER


class ContractViolationError(OpRiskError):
    """A precondition on the data handed to an operation does not hold."""

    category = ErrorCategory.CONTRACT


class ClassificationError(OpRiskError):
    """A closed form was called on a process of the wrong subgraph class."""

    category = ErrorCategory.CLASSIFICATION


class ResourceLimitError(OpRiskError):
    """Exact enumeration would exceed the configured number of terms."""

    category = ErrorCategory.RESOURCE


class DataError(OpRiskError):
    """The loss database cannot support the requested operation."""

    category = ErrorCategory.DATA


class DegenerateDataError(DataError):
    """The data make an estimator diverge (no losses, all losses...)."""

    category = ErrorCategory.DEGENERATE_DATA


class InsufficientEventsError(DataError):
    """No conditioning event was found for a conditional frequency."""

    category = ErrorCategory.INSUFFICIENT_EVENTS


class InfeasibleEstimateError(DataError):
    """The data point to a parameter outside the estimable region."""

    category = ErrorCategory.INFEASIBLE


class UnsupportedModelError(OpRiskError):
    """The model lies outside what the exact machinery handles."""

    category = ErrorCategory.UNSUPPORTED


class FormatError(OpRiskError):
    """A database or configuration file is malformed."""

    category = ErrorCategory.FORMAT


class UsageError(OpRiskError):
    """The command line is inconsistent."""

    category = ErrorCategory.USAGE
