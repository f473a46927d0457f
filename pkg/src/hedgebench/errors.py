"""Exception types shared across the package."""


class HedgebenchError(Exception):
    """Base class for all package-specific errors."""


class ParameterError(HedgebenchError, ValueError):
    """A parameter violates its documented invariant."""


class NumericError(HedgebenchError, ArithmeticError):
    """A computation produced a non-finite or otherwise invalid value.

    The message carries context (path/step/epoch indices) where available.
    """


class DegenerateDataError(HedgebenchError, ValueError):
    """Input data has no spread where spread is required (zero variance)."""


class ParseError(HedgebenchError, ValueError):
    """A file could not be parsed; ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(HedgebenchError, ValueError):
    """A config key is unknown, mistyped, or violates an invariant."""

    def __init__(self, message, key=None, line=None):
        prefix = ""
        if key is not None:
            prefix = f"{key}: "
        if line is not None:
            prefix = f"line {line}: " + prefix
        super().__init__(prefix + message)
        self.key = key
        self.line = line
