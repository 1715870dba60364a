"""Exception hierarchy shared by every module of the package."""


class SphereReIDError(Exception):
    pass


class DegenerateNorm(SphereReIDError, ValueError):
    """A vector is too short to define a direction."""


class DimensionMismatch(SphereReIDError, ValueError):
    pass


class ShapeMismatch(DimensionMismatch):
    pass


class BatchTooSmall(SphereReIDError, ValueError):
    pass


class StaleCache(SphereReIDError, RuntimeError):
    """Backward was requested without a matching forward."""


class ConfigError(SphereReIDError, ValueError):
    pass


class InvalidConfig(ConfigError):
    pass


class InvalidSpec(ConfigError):
    pass


class OutOfRange(SphereReIDError, ValueError):
    pass


class EmptyGallery(SphereReIDError, ValueError):
    pass


class NoValidQueries(SphereReIDError, ValueError):
    pass


class InsufficientData(SphereReIDError, ValueError):
    pass


class DatasetError(SphereReIDError, ValueError):
    pass


class ParseError(DatasetError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SchemaError(DatasetError):
    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class CheckpointError(SphereReIDError, ValueError):
    pass


class DivergenceDetected(SphereReIDError, FloatingPointError):
    """Training loss became non-finite; ``log`` holds the epochs completed so far."""

    def __init__(self, message, log=None):
        super().__init__(message)
        self.log = log
