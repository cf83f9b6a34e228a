"""Boundary-data dynamics for semilinear elliptic equations on level-set domain families."""

__version__ = "0.1.0"

from .geometry import (DomainFamilyCache, FlowField, HypothesisViolation, LevelFunction, builtin_level,
                       ellipse_level, radial_level, validate_level_function)
from .spectral import CircleBasis, SphereBasis, make_basis
from .dynamics import (BoundarySystem, LinearSystemSpec, NonlinearityModel, OverflowAbort, RankCollapse,
                       estimate_rates)
from .harmonic import HarmonicMode, exact_trace
from .eigensolver import DIRICHLET, NEUMANN, eigenvalue_sweep
from .reconstruct import TraceHistory, reconstruct_field, removable_singularity_check, weak_residual
from .config import ExperimentConfig, load_config

__all__ = [
    "DomainFamilyCache", "FlowField", "HypothesisViolation", "LevelFunction", "builtin_level",
    "ellipse_level", "radial_level", "validate_level_function", "CircleBasis", "SphereBasis", "make_basis",
    "BoundarySystem", "LinearSystemSpec", "NonlinearityModel", "OverflowAbort", "RankCollapse",
    "estimate_rates", "HarmonicMode", "exact_trace", "DIRICHLET", "NEUMANN", "eigenvalue_sweep",
    "TraceHistory", "reconstruct_field", "removable_singularity_check", "weak_residual",
    "ExperimentConfig", "load_config",
]
