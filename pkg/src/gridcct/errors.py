"""Exception types shared across the package."""


class GridCctError(Exception):
    """Base class for all errors raised by gridcct."""


class CaseParseError(GridCctError, ValueError):
    """Malformed case file or canonical JSON."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CaseValidationError(GridCctError, ValueError):
    """Case parsed but violates a GridCase invariant."""


class PowerFlowError(GridCctError, ValueError):
    """DC power flow could not be solved (unbalanced or singular)."""


class ModelError(GridCctError, ValueError):
    """Statistical model precondition failed (non-PD matrix, bad sizes)."""


class AttackError(GridCctError, ValueError):
    """Invalid attack definition."""


class TuningError(GridCctError):
    """No threshold reached the required edit distance."""

    def __init__(self, message, result=None):
        self.result = result
        super().__init__(message)
