"""Exception types raised across the package."""


class BadgeppError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(BadgeppError, ValueError):
    pass


class DegenerateParameterError(BadgeppError, ValueError):
    pass


class NoCandidateError(BadgeppError, ValueError):
    """An answer pmf was requested at a time with no earlier questions."""


class ZeroLikelihoodError(BadgeppError, ArithmeticError):
    """An observed event has zero intensity or zero mark probability."""

    def __init__(self, message, event_index=None):
        super().__init__(message)
        self.event_index = event_index


class InsufficientDataError(BadgeppError, ValueError):
    pass


class NoEventExpectedError(BadgeppError, ValueError):
    pass


class InvariantError(BadgeppError, RuntimeError):
    """An internal invariant was violated (a bug, not bad input)."""


class DataFormatError(BadgeppError, ValueError):
    """Malformed input file; carries the offending line and/or field path."""

    def __init__(self, message, line=None, field=None):
        parts = [message]
        if line is not None:
            parts.append(f"line {line}")
        if field is not None:
            parts.append(f"field {field!r}")
        super().__init__(": ".join(parts) if len(parts) == 1 else f"{message} ({', '.join(parts[1:])})")
        self.line = line
        self.field = field


class UnsupportedVersionError(DataFormatError):
    pass
