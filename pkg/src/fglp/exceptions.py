"""Exception types shared across the package."""


class FGLPError(Exception):
    """Base class for every package-specific error."""


class ValidationError(FGLPError, ValueError):
    """An argument or an input record violates a documented contract."""


class TrajectoryParseError(ValidationError):
    """A trajectory CSV row could not be parsed or failed validation.

    Carries the 1-based physical line number (header line counts as 1).
    """

    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class InsufficientDataError(ValidationError):
    """Too few points/samples to perform the requested operation."""


class ShapeError(ValidationError):
    """Array shapes do not agree with the operation's contract."""


class GradCheckError(FGLPError):
    """A gradient check produced non-finite values."""
