"""Energy-aware placement of function invocations across heterogeneous machines."""

from .core import FileRef, FunctionProfile, MachineSpec, Prediction, ProfileStore, Sharing, TaskRecord, TaskSpec
from .errors import ConfigError, DataError, EnerschedError, InvariantViolation

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "EnerschedError",
    "FileRef",
    "FunctionProfile",
    "InvariantViolation",
    "MachineSpec",
    "Prediction",
    "ProfileStore",
    "Sharing",
    "TaskRecord",
    "TaskSpec",
    "__version__",
]
