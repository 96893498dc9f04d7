"""Exception types shared across the package."""


class SymhrecError(Exception):
    """Base class for all package errors."""


class GeometryError(SymhrecError):
    """Invalid geometric value (non-unit axis, degenerate point set, ...)."""


class TreeError(SymhrecError):
    """Structurally invalid tree passed where a valid one is required."""


class ParseError(SymhrecError):
    """Malformed tree text.  Carries the 1-based line number."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericError(SymhrecError):
    """Non-finite value encountered during training or inference."""
