"""Exception hierarchy shared across the package.

Each category carries the exit code the command line layer reports, so
scripted callers get a stable mapping from failure class to status.
"""


class TrajbenchError(Exception):
    exit_code = 1


class ConfigurationError(TrajbenchError):
    """Bad experiment, sequence-set, or method configuration."""

    exit_code = 1


class DataError(TrajbenchError):
    """Malformed or missing sequence data, trajectories, or downloads."""

    exit_code = 2


class ExecutionError(TrajbenchError):
    """A method process could not be launched or supervised."""

    exit_code = 3


class EvaluationError(TrajbenchError):
    """Metric or report computation failed on otherwise valid inputs."""

    exit_code = 4
