"""Variable-step implicit BDF2 solver for the 2D thin-film growth equation
with slope selection, with kernel verification tools and experiment drivers."""

from .grid import Field, GridSpec, VecField
from .model import EnergyRecord, ModelParams
from .solver import MarchResult, SolverConfig, SolverError, SolverState, march, step
from .adaptive import AdaptiveResult, ControllerConfig, run_adaptive
from .timekernels import KernelSet, StabilityConstants, TimeMesh

__version__ = "0.1.0"

__all__ = [
    "Field",
    "GridSpec",
    "VecField",
    "EnergyRecord",
    "ModelParams",
    "MarchResult",
    "SolverConfig",
    "SolverError",
    "SolverState",
    "march",
    "step",
    "AdaptiveResult",
    "ControllerConfig",
    "run_adaptive",
    "KernelSet",
    "StabilityConstants",
    "TimeMesh",
    "__version__",
]
