"""Exception types raised by the package."""


class ModelError(ValueError):
    """Invalid model declaration, data, or configuration."""


class ConfigError(ModelError):
    """Configuration file could not be parsed or validated.

    ``line`` and ``column`` are 1-based when known.
    """

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f" (line {line}" + (f", column {column})" if column is not None else ")")
        super().__init__(message + where)


class NumericalError(RuntimeError):
    """Base class for numerical failures."""


class NotPositiveDefiniteError(NumericalError):
    def __init__(self, message, pivot=None):
        self.pivot = pivot
        super().__init__(message)


class SingularHessianError(NumericalError):
    def __init__(self, message, directions=None):
        self.directions = directions
        super().__init__(message)


class ConvergenceError(NumericalError):
    pass


class DivergenceError(NumericalError):
    def __init__(self, message, trace=None):
        self.trace = list(trace) if trace is not None else []
        super().__init__(message)


class SamplerError(NumericalError):
    def __init__(self, message, scale_trace=None):
        self.scale_trace = list(scale_trace) if scale_trace is not None else []
        super().__init__(message)
