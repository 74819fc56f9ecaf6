"""Exception hierarchy.

Each class carries the CLI exit code of its failure class so the command
line front end can map errors without a lookup table.
"""


class IHMMError(Exception):
    exit_code = 1


class ConfigError(IHMMError, ValueError):
    exit_code = 2


class DataError(IHMMError, ValueError):
    exit_code = 3


class SchemaError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SequencingError(DataError):
    pass


class NumericalError(IHMMError, ArithmeticError):
    exit_code = 4


class DegenerateCloudError(NumericalError):
    pass


class CheckpointError(IHMMError):
    exit_code = 3


class CorruptCheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass
