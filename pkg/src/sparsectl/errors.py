"""Exception hierarchy shared by all sparsectl modules."""

from __future__ import annotations


class SparseCtlError(Exception):
    """Base class for every error raised by this package."""


class InputError(SparseCtlError, ValueError):
    """Malformed or out-of-range arguments (bad shapes, non-finite entries, ...)."""


class ParseError(InputError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class PreconditionError(InputError):
    """A hypothesis of a scheduling guarantee does not hold.

    ``condition`` is a short machine-readable tag such as ``"rank_B"``,
    ``"sparsity"`` or ``"horizon"``.
    """

    def __init__(self, condition: str, message: str):
        self.condition = condition
        super().__init__(f"[{condition}] {message}")


class NotControllableError(SparseCtlError):
    """The selected columns do not span the state space."""


class BoundUndefinedError(SparseCtlError):
    """The steady-state MSE bound requires more sparsity than was given."""

    def __init__(self, message: str, min_s: float):
        self.min_s = min_s
        super().__init__(message)


class NumericalError(SparseCtlError, ArithmeticError):
    pass


class ConvergenceError(NumericalError):
    def __init__(self, message: str, residual: float, iterations: int):
        self.residual = residual
        self.iterations = iterations
        super().__init__(f"{message} (residual={residual:.3e} after {iterations} iterations)")


class SearchSpaceTooLarge(SparseCtlError):
    def __init__(self, size: int, limit: int):
        self.size = size
        self.limit = limit
        super().__init__(f"feasible set has {size} schedules, limit is {limit}")
