"""Benchmark harness for camera-trajectory estimators.

Sequences live in one standardized on-disk layout, methods are external
executables driven through a fixed command-line contract, and estimates
are scored against ground truth with similarity-aligned ATE.
"""

from .errors import (
    ConfigurationError,
    DataError,
    EvaluationError,
    ExecutionError,
    TrajbenchError,
)
from .evaluation import (
    AteResult,
    associate,
    compute_ate,
    error_statistics,
    umeyama_align,
)
from .trajectory import (
    PoseSE3,
    Sim3Transform,
    Trajectory,
    apply_sim3,
    parse_trajectory,
    read_trajectory_file,
    serialize_trajectory,
    write_trajectory_file,
)

__version__ = "0.1.0"

__all__ = [
    "AteResult",
    "ConfigurationError",
    "DataError",
    "EvaluationError",
    "ExecutionError",
    "PoseSE3",
    "Sim3Transform",
    "Trajectory",
    "TrajbenchError",
    "apply_sim3",
    "associate",
    "compute_ate",
    "error_statistics",
    "parse_trajectory",
    "read_trajectory_file",
    "serialize_trajectory",
    "umeyama_align",
    "write_trajectory_file",
    "__version__",
]
