"""Exception types shared across the package."""


class AscNetError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(AscNetError, ValueError):
    pass


class ParameterError(AscNetError, ValueError):
    pass


class DeterminismError(AscNetError, RuntimeError):
    pass


class TrainingAborted(AscNetError, RuntimeError):
    """Raised when a loss component becomes NaN or infinite."""

    def __init__(self, component: str, step: int, value: float):
        self.component = component
        self.step = step
        self.value = value
        super().__init__(f"non-finite {component}={value!r} at step {step}")


class FormatError(AscNetError, ValueError):
    """A binary container could not be parsed.

    ``offset`` is the byte position where parsing failed.
    """

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (at byte offset {offset})")


class BadMagicError(FormatError):
    pass


class UnsupportedVersionError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class LabelRangeError(FormatError):
    pass


class ConfigError(AscNetError, ValueError):
    pass
