"""Exception types shared across the package."""


class AccuracyError(RuntimeError):
    """A numerical tolerance cannot be met with the requested discretization.

    Raised when a truncation/window is too small for the requested accuracy
    (e.g. a lattice-sum window that does not capture the Gaussian tail, or a
    plane-wave cutoff that clips the momentum content of a state).
    """


class ConfigParseError(ValueError):
    """Malformed experiment configuration text."""

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"line {line}" + (f", col {column}" if column else "") + f": {message}"
        super().__init__(message)


class ConfigValidationError(ValueError):
    """A parsed configuration violates a documented constraint."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")
