"""Common test fixtures for oprisk-dynamics tests."""

import numpy as np
import pytest

from oprisk_dynamics.core import LossTrajectory, ModelParams
from oprisk_dynamics.database import benchmark_params as make_benchmark_params
from oprisk_dynamics.graph import CouplingStructure
from oprisk_dynamics.oprisk_constants import Origin
from oprisk_dynamics.simulate import SimulationConfig, run_trajectory


def complete_structure(n, steps):
    """Every off-diagonal coupling declared with the same look-back."""
    pattern = ~np.eye(n, dtype=bool)
    return CouplingStructure(pattern, np.where(pattern, steps, 0))


@pytest.fixture
def benchmark_params():
    """Fixture to provide the five-process benchmark scenario."""
    return make_benchmark_params()


@pytest.fixture
def benchmark_structure(benchmark_params):
    """Fixture to provide the structure of the benchmark scenario."""
    return CouplingStructure.from_params(benchmark_params)


@pytest.fixture(scope="session")
def benchmark_db():
    """Fixture to provide one medium-length simulated benchmark database."""
    config = SimulationConfig(50_000, seed=7)
    return run_trajectory(make_benchmark_params(), config)


@pytest.fixture
def table_db():
    """Fixture to provide a six-step, five-process database.

    Nonzero losses at (t, process): (3, 2), (4, 2), (5, 1), (5, 3), (6, 0).
    """
    losses = np.zeros((6, 5))
    losses[2, 2] = 1.5
    losses[3, 2] = 0.25
    losses[4, 1] = 2.0
    losses[4, 3] = 0.75
    losses[5, 0] = 3.0
    return LossTrajectory(losses, Origin.INGESTED)


@pytest.fixture
def table_structure():
    """Fixture to provide the complete pattern with look-back 2."""
    return complete_structure(5, 2)


@pytest.fixture
def loop_params():
    """Fixture to provide two processes influencing each other."""
    return ModelParams.from_edges(
        [-1.0, -1.0, -1.0],
        [3.0, 3.0, 4.0],
        {(0, 1): (0.1, 2), (1, 0): (0.1, 2), (2, 0): (0.2, 3)},
    )


@pytest.fixture
def diamond_params():
    """Fixture to provide 0 -> 1, 0 -> 2 and {1, 2} -> 3."""
    return ModelParams.from_edges(
        [-0.5, -1.0, -0.8, -1.0],
        [2.0, 3.0, 4.0, 5.0],
        {
            (1, 0): (0.3, 1),
            (2, 0): (0.2, 2),
            (3, 1): (0.25, 1),
            (3, 2): (0.15, 2),
        },
    )
