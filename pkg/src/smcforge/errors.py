"""Exception hierarchy shared by every smcforge module."""


class SmcError(Exception):
    """Base class for all smcforge errors."""


class ArgumentError(SmcError, ValueError):
    """A function argument violates its documented precondition."""


class ValidationError(SmcError, ValueError):
    """Input data violates a data-model invariant."""


class CsvRowError(ValidationError):
    def __init__(self, path, line: int, message: str):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {message}")


class EmptyOverlapError(ValidationError):
    """Sensor, weather and scene date ranges share no common day."""


class CubeFormatError(SmcError):
    """Base class for SMC1 decoding failures."""


class BadMagicError(CubeFormatError):
    pass


class VersionMismatchError(CubeFormatError):
    pass


class TruncatedCubeError(CubeFormatError):
    def __init__(self, expected: int, actual: int):
        self.expected = expected
        self.actual = actual
        super().__init__(f"truncated cube: expected {expected} bytes, found {actual}")


class TrainingError(SmcError, RuntimeError):
    """Non-finite loss or gradient during training."""


class UndefinedMetricError(ValidationError):
    pass


class MissingArtifactError(SmcError):
    """A pipeline command needs output from a command that has not run yet."""
