"""Discrete-velocity ES-BGK solver with entropy, conservation and
stability diagnostics."""
from .grid import PhaseGrid, build_grid
from .integrator import DistributionField, StepConfig, run, step
from .moments import compute_moments
from .scenarios import ScenarioSpec, build_initial

__all__ = [
    "PhaseGrid",
    "build_grid",
    "DistributionField",
    "StepConfig",
    "run",
    "step",
    "compute_moments",
    "ScenarioSpec",
    "build_initial",
]
__version__ = "0.1.0"
