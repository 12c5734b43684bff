"""Shared exception types."""


class UsageError(ValueError):
    """Arguments violate an operation's preconditions."""


class DomainError(ValueError):
    """Inputs are outside the mathematical domain of the requested quantity."""


class BudgetError(UsageError):
    """A request exceeds the configured enumeration or memory budget."""


class ConvergenceError(RuntimeError):
    """An iterative evaluation failed to stabilize within the allowed depth."""

    def __init__(self, message, last_iterates=None):
        super().__init__(message)
        self.last_iterates = last_iterates


class RangeError(OverflowError):
    """A value left the representable floating-point range."""
