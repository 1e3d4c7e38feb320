"""Exception hierarchy.

Everything that indicates bad input derives from ``ValidationError`` so the CLI
can map it to exit code 1; filesystem problems are left as ``OSError`` (exit 2).
"""


class ValidationError(ValueError):
    pass


class LabelMismatchError(ValidationError):
    """Two poses were chained whose space labels do not line up."""


class ParseError(ValidationError):
    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")


class OutOfRangeError(ValidationError):
    pass


class GapError(ValidationError):
    pass


class InsufficientDataError(ValidationError):
    pass


class DegenerateMotionError(ValidationError):
    pass
