"""Patch-based multiscale P1 finite elements with random potentials.

Assembles and solves the scheme, samples short- and long-range correlated
potentials, and checks corrector statistics against predicted variances.
"""

__version__ = "0.1.0"

from .config import ExperimentConfig, parse_config
from .errors import AssemblyError, ConfigError, EnsembleError, ResourceLimitError, SolverError
from .mesh import build_mesh, shrink_to_patch

__all__ = [
    "AssemblyError",
    "ConfigError",
    "EnsembleError",
    "ExperimentConfig",
    "ResourceLimitError",
    "SolverError",
    "build_mesh",
    "parse_config",
    "shrink_to_patch",
    "__version__",
]
