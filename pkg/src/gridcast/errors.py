"""Exception hierarchy shared by every stage of the pipeline.

Each class carries the CLI exit code used when it escapes ``gridcast.cli``.
"""


class GridcastError(Exception):
    exit_code = 1


class ConfigError(GridcastError, ValueError):
    exit_code = 2


class DataError(GridcastError, ValueError):
    exit_code = 3


class TrainingError(GridcastError, RuntimeError):
    exit_code = 4


class EvaluationError(GridcastError, ValueError):
    exit_code = 5
