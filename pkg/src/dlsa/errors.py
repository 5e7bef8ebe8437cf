"""Exception hierarchy shared by every module."""


class DLSAError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(DLSAError, ValueError):
    pass


class EmptyInputError(DLSAError, ValueError):
    pass


class LabelError(DLSAError, ValueError):
    pass


class DimensionalityError(DLSAError, ValueError):
    pass


class InsufficientSamplesError(DLSAError, ValueError):
    pass


class DegenerateVarianceError(DLSAError, ArithmeticError):
    pass


class DegenerateSlopeError(DLSAError, ArithmeticError):
    pass


class ConfigError(DLSAError, ValueError):
    pass


class EvaluationError(DLSAError, ValueError):
    pass


class ParseError(DLSAError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CheckpointError(DLSAError, ValueError):
    pass


class NumericError(DLSAError, FloatingPointError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
