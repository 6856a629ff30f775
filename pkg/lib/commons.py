"""Exceptions shared by every module and their mapping to CLI exit codes."""


class DSMError(Exception):
    """Base class for all errors raised by the library."""


class InputError(DSMError, ValueError):
    """Raise when arguments are malformed (dimensions, non-finite values)."""


class SpecError(InputError):
    """Raise on an unknown problem name or invalid problem parameters."""


class ParseError(InputError):
    """Raise when a problem file cannot be read.

    `line` and `column` are 1-based; column is None for whole-row errors.
    """

    def __init__(self, message: str, line: int, column: int | None = None):
        where = f'line {line}'
        if column is not None:
            where += f', column {column}'
        super().__init__(f'{message} ({where})')
        self.line = line
        self.column = column


class UsageError(DSMError):
    """Raise on invalid command-line usage."""


class NumericError(DSMError, ArithmeticError):
    """Raise when a computation produces unusable numbers.

    `payload` carries whatever helps diagnose the failure: offending
    coordinates, the last iterate, the sample point.
    """

    def __init__(self, message: str, payload=None):
        super().__init__(message)
        self.payload = payload


class SingularityError(NumericError):
    """Raise when A + eps*I is singular to working precision."""

    def __init__(
        self, message: str, eps: float | None = None, t=None, payload=None
    ):
        super().__init__(message, payload)
        self.eps = eps
        self.t = t


class SourceConditionUnavailable(SingularityError):
    """Raise when A*psi = y cannot be solved.

    y may not be in the range of A.
    """


class FlowFailure(NumericError):
    """Raise when the flow cannot be continued past time `t`."""

    def __init__(self, message: str, t: float, payload=None):
        super().__init__(message, payload)
        self.t = t


class StiffnessError(FlowFailure):
    """Raise when the step size underflows."""


class BudgetError(FlowFailure):
    """Raise when the step budget is exhausted."""


class DivergenceError(NumericError):
    """Raise when fixed-point steps keep growing.

    `history` holds the step norms.
    """

    def __init__(self, message: str, history: list[float], payload=None):
        super().__init__(message, payload)
        self.history = history


class InsufficientDataError(DSMError):
    """Raise when a fit has fewer usable points than it needs."""


class PathError(DSMError):
    """Raise when every solve along an eps-schedule failed."""


class HypothesisViolation(DSMError):
    """Raise when a hypothesis of the fixed-point construction fails.

    `condition` names the violated inequality: 'rho<1' when the radius
    is undefined, 'eta<1' when contraction is not certified, 'self-map'
    for an iterate leaving the ball.
    """

    def __init__(self, message: str, condition: str, value: float):
        super().__init__(message)
        self.condition = condition
        self.value = value


def exit_code(exc: BaseException) -> int:
    """Return the dsm.py exit code for `exc`."""
    if isinstance(exc, HypothesisViolation):
        return 1
    if isinstance(exc, InputError | UsageError):
        return 3
    return 2
