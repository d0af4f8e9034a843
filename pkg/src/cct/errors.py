"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class CctError(Exception):
    exit_code = 1


class UsageError(CctError):
    exit_code = 2


class DataError(CctError):
    exit_code = 3


class ConfigError(CctError):
    exit_code = 4


class TokenizerGeometryError(ConfigError):
    """Raised when a conv/pool stage would produce a non-positive spatial extent."""

    def __init__(self, message, stage=None, trace=()):
        super().__init__(message)
        self.stage = stage
        self.trace = list(trace)


class ShapeError(ConfigError, ValueError):
    pass


class ParameterError(ConfigError, ValueError):
    pass


class CheckpointError(CctError):
    exit_code = 3


class VersionError(CheckpointError):
    pass


class IntegrityError(CheckpointError):
    pass


class NumericError(CctError, FloatingPointError):
    exit_code = 5
