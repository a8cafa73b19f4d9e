"""Finite element experiments for identifying nonlinear Robin (corrosion) laws from boundary data."""

from .config import ExperimentConfig, load_config, parse_config, preset
from .errors import CorrodeError
from .inverse import (CauchyPair, CompletionOperator, Design, ReachableSample, complete_cauchy_data,
                      coverage_check, generate_cauchy_data, harvest_samples,
                      reconstruct_nonlinearity, verify_identification)
from .linear import RobinOperator, solve_restricted
from .mesh import ACCESSIBLE, INACCESSIBLE, Mesh, build_unit_disk_mesh, build_unit_square_mesh
from .nonlinear import NonlinearRobin, Nonlinearity, catalog, parse_nonlinearity
from .runge import amplitude_sweep, approximate_trace

__all__ = [
    "ACCESSIBLE", "INACCESSIBLE", "CauchyPair", "CompletionOperator", "CorrodeError", "Design",
    "ExperimentConfig", "Mesh", "NonlinearRobin", "Nonlinearity", "ReachableSample", "RobinOperator",
    "amplitude_sweep", "approximate_trace", "build_unit_disk_mesh", "build_unit_square_mesh", "catalog",
    "complete_cauchy_data", "coverage_check", "generate_cauchy_data", "harvest_samples", "load_config",
    "parse_config", "parse_nonlinearity", "preset", "reconstruct_nonlinearity", "solve_restricted",
    "verify_identification",
]
