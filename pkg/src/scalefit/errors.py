"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: :class:`ValidationError` is a data
problem (exit 2), :class:`NumericalError` a numerical failure (exit 3).
"""


class ScaleFitError(Exception):
    """Base class for all errors raised by scalefit."""


class ValidationError(ScaleFitError, ValueError):
    """Input data or arguments violate a documented precondition."""


class ParseError(ValidationError):
    """A run or curve file could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MissingMetricError(ValidationError, KeyError):
    """A named downstream metric is absent where it is required."""

    def __init__(self, metric: str, detail: str = ""):
        self.metric = metric
        msg = f"metric {metric!r} not available"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)

    def __str__(self) -> str:  # KeyError would repr() the message otherwise
        return self.args[0]


class NumericalError(ScaleFitError, ArithmeticError):
    """A numerical routine failed (non-finite values, no convergence, mismatch)."""


class NonFiniteError(NumericalError):
    """Objective or gradient evaluated to a non-finite value."""

    def __init__(self, message: str, point=None):
        self.point = point
        if point is not None:
            message = f"{message} at x={list(point)!r}"
        super().__init__(message)
