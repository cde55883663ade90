class OdmarlError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(OdmarlError, ValueError):
    pass


class NoDataError(OdmarlError, LookupError):
    """A state-action pair has no records in the dataset."""

    def __init__(self, state: int, action: int):
        super().__init__(f"no data for state {state}, action {action}")
        self.state = state
        self.action = action


class DatasetFormatError(OdmarlError, ValueError):
    def __init__(self, message: str, lineno: int | None = None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


class InconsistentRewardError(OdmarlError, ValueError):
    pass


class DegenerateError(OdmarlError, ArithmeticError):
    """Expected backup or modified mass too close to zero to normalize by."""


class ConvergenceError(OdmarlError, RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (final residual {residual:.3e})")
        self.residual = residual


class DivergenceError(OdmarlError, RuntimeError):
    pass


class AlignmentError(OdmarlError, RuntimeError):
    pass
