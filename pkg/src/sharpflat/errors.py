"""Shared exception types, mapped to CLI exit codes by the cli module."""


class SharpflatError(Exception):
    """Base class for all library errors."""


class ParseError(SharpflatError):
    """Malformed input file (exit code 2)."""

    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        self.line = line
        self.col = col
        if line is not None:
            message = f"{line}:{col}: {message}"
        super().__init__(message)


class StructureError(SharpflatError):
    """Semantically invalid structure or system (exit code 2)."""


class ValidationFailure(SharpflatError):
    """An input failed a semantic check, with a witness (exit code 1)."""


class TruncationError(SharpflatError):
    """An operation needs arities beyond the configured bound (exit code 1)."""


class FlatnessError(SharpflatError):
    """A flat structure violates an axiom an operation relies on (exit code 1)."""


class GuardError(SharpflatError):
    """A size guard was exceeded (exit code 3)."""
