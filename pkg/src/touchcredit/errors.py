"""Exception types shared across the package."""


class TouchcreditError(Exception):
    """Base class for all package errors."""


class DimensionError(TouchcreditError, ValueError):
    """Operand shapes are incompatible."""


class DomainError(TouchcreditError, ValueError):
    """An argument lies outside the operation's domain."""


class ConfigError(TouchcreditError, ValueError):
    """A configuration is invalid or inconsistent."""


class IngestError(TouchcreditError, ValueError):
    """A path record could not be parsed."""

    def __init__(self, message, line_no=None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class LoadError(TouchcreditError):
    """A model file is corrupt or does not match its declared contents."""


class DivergenceError(TouchcreditError, FloatingPointError):
    """Training produced a non-finite loss."""


class NonFiniteError(DomainError, FloatingPointError):
    """An operation produced NaN or infinite entries."""
