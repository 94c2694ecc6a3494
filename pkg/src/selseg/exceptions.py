"""Exception types shared across the package."""


class SelsegError(Exception):
    """Base class for all selseg errors."""


class ParseError(SelsegError):
    """Malformed input file; carries the offending line number when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class InvalidSegmentationError(SelsegError):
    """Break dates out of range, unordered, or violating a minimum duration."""


class SingularDesignError(SelsegError):
    """Design matrix is rank deficient; ``column`` is the offending column index."""

    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class WindowTooShortError(SelsegError):
    """A likelihood window has fewer rows than coefficients plus one."""


class InsufficientObservationsError(SelsegError):
    """More regression columns than observations."""


class ConvergenceError(SelsegError):
    """An iterative routine failed to converge."""
