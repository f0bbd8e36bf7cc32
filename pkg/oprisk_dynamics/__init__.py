"""Dynamical model of operational losses: simulation, exact moments and fitting."""

__version__ = "0.1.0"

from .analytic import moment_report, solve_moments
from .cli import main
from .core import ExponentialNoise, LossTrajectory, ModelParams, UniformNoise
from .errors import OpRiskError
from .estimate import estimate_all, scan_events
from .forecast import run_forecast
from .graph import CouplingStructure, build_graph, classify_subgraph
from .oprisk_constants import (
    DEFAULT_CONFIDENCE,
    REGULATORY_CONFIDENCE,
    Aggregation,
    GeneratingModel,
    SeverityMode,
    SubgraphKind,
)
from .simulate import SimulationConfig, run_ensemble, run_trajectory
