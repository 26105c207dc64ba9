"""
Exception hierarchy for the uncoupled-autoencoder toolkit.

Library code raises these; only the CLI turns them into exit codes.
"""

from typing import Optional


class UcaeError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(UcaeError, ValueError):
    """Shapes of matrices, models or codes do not fit together."""


class NumericError(UcaeError, ArithmeticError):
    """A non-finite value appeared, or a numeric routine failed."""

    def __init__(self, operation: str, message: str, step: Optional[int] = None):
        self.operation = operation
        self.step = step
        where = f"{operation} (step {step})" if step is not None else operation
        super().__init__(f"{where}: {message}")


class ConvergenceError(NumericError):
    """An iterative solver ran out of iterations."""


class BudgetError(UcaeError, ValueError):
    """Input is larger than the exact solver accepts; subsample first."""


class PreconditionError(UcaeError, ValueError):
    """An operation was called in a state it does not accept."""


class DatasetError(UcaeError, ValueError):
    """A CSV dataset could not be parsed."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class CheckpointError(UcaeError, ValueError):
    """A checkpoint file is malformed, truncated or of the wrong kind."""


class ConfigError(UcaeError, ValueError):
    """An experiment config has unknown keys or bad values."""


class UsageError(UcaeError):
    """Bad command-line usage (unknown flag, incompatible inputs)."""
