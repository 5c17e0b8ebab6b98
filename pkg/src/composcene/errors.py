"""Exception types shared across the package."""


class ParameterError(ValueError):
    """An argument violates a documented precondition."""


class ShapeError(ParameterError):
    """Array arguments whose shapes do not line up."""


class NumericError(ArithmeticError):
    """Non-finite values where finite ones are required."""

    def __init__(self, message, step=None):
        if step is not None:
            message = f"{message} (at step {step})"
        super().__init__(message)
        self.step = step


class EnumerationCapError(ParameterError):
    """The discrete configuration space is too large to enumerate."""


class UnsupportedArchitectureError(RuntimeError):
    """Gradient requested through a configuration that cannot provide one."""


class DataFormatError(RuntimeError):
    """Base class for problems with serialized containers."""


class VersionError(DataFormatError):
    def __init__(self, found, supported):
        super().__init__(
            f"file carries format version {found}; this reader supports {supported}"
        )
        self.found = found
        self.supported = supported


class TruncationError(DataFormatError):
    """The file ends before its declared payload does."""


class ChecksumError(DataFormatError):
    """Stored digest does not match the file contents."""


class ConfigError(ValueError):
    """Run configuration is missing, malformed, or carries unknown keys."""
