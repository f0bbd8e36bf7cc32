"""Frequency/severity dynamics ``l_i(t) = s_i(t) n_i(t)``.

``n_i(t)`` is the indicator of a positive argument of the equation of
motion and ``s_i(t)`` a positive severity drawn independently of the noise.
"""

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Any, Dict, List, Optional

import numpy as np
from scipy.stats import gamma

from .analytic import DriveDistribution, drive_distribution
from .core import ExponentialNoise, LossTrajectory, ModelParams
from .errors import DegenerateDataError, ParameterError
from .estimate import lambda_free
from .oprisk_constants import GeneratingModel, SeverityMode
from .simulate import SimulationConfig, evolve_trajectory

logger = logging.getLogger(__name__)

_TINY = np.finfo(float).tiny

# Points of the tabulated inverse survival function.
TABLE_POINTS = 4097


@dataclass(frozen=True)
class SeveritySpec:
    """How the severity of each process is chosen.

    ``distribution`` is a frozen scipy distribution used by the arbitrary
    mode; ``constant`` replaces it with a fixed amount. ``shape`` is the gamma
    shape of the mean-constrained mode.
    """

    mode: SeverityMode
    distribution: Optional[Any] = None
    constant: Optional[float] = None
    shape: float = 2.0

    def __post_init__(self):
        """Validate the mode-specific fields."""
        if self.mode is SeverityMode.ARBITRARY:
            if (self.distribution is None) == (self.constant is None):
                raise ParameterError(
                    "arbitrary severity needs exactly one of distribution, constant"
                )
            if self.constant is not None and not self.constant > 0:
                raise ParameterError(f"severity must be positive, got {self.constant}")
        if not self.shape > 0:
            raise ParameterError(f"gamma shape must be positive, got {self.shape}")

    @property
    def generating_model(self) -> GeneratingModel:
        """Tag recorded in simulated databases."""
        return {
            SeverityMode.CONSTRAINED: GeneratingModel.ALT_CONSTRAINED,
            SeverityMode.MEAN_CONSTRAINED: GeneratingModel.ALT_MEAN_CONSTRAINED,
            SeverityMode.ARBITRARY: GeneratingModel.ALT_ARBITRARY,
        }[self.mode]


class ConstantSeverity:
    """Every severity equals ``value``."""

    def __init__(self, value: float):
        """Initialize with the fixed amount."""
        self.value = float(value)

    def sample(self, rng: np.random.Generator, size: Any) -> np.ndarray:
        """Return the constant."""
        return np.full(size, self.value)


class FrozenSeverity:
    """Severities drawn from a frozen scipy distribution."""

    def __init__(self, distribution: Any):
        """Initialize with a frozen distribution of positive support."""
        self.distribution = distribution

    def sample(self, rng: np.random.Generator, size: Any) -> np.ndarray:
        """Draw from the distribution."""
        draws = self.distribution.rvs(size=size, random_state=rng)
        return np.maximum(draws, _TINY)


class ExcessSeverity:
    """Excess of an exponential noise over the threshold of each drive value.

    A drive value ``a`` is picked with probability proportional to
    ``w(a) Pr[a + xi > 0]``; given that, the loss ``a + xi`` exceeds
    ``max(a, 0)`` by an exponential amount of the same rate.
    """

    def __init__(self, drive: DriveDistribution):
        """Weight each drive value by its loss probability."""
        loss = drive.weights * np.asarray(drive.noise.loss_probability(drive.values))
        total = math.fsum(loss)
        if total <= 0:
            raise ParameterError("the process never loses; no severity to sample")
        self.offsets = np.maximum(drive.values, 0.0)
        self.probabilities = loss / total
        self.rate = drive.noise.rate

    def sample(self, rng: np.random.Generator, size: Any) -> np.ndarray:
        """Pick a drive value, then add an exponential excess."""
        picks = rng.choice(self.offsets.size, size=size, p=self.probabilities)
        draws = self.offsets[picks] + rng.exponential(1.0 / self.rate, size=size)
        return np.maximum(draws, _TINY)


class TabulatedSeverity:
    """Inverse-transform sampling from a tabulated survival function."""

    def __init__(self, drive: DriveDistribution, points: int = TABLE_POINTS):
        """Tabulate the conditional survival on a uniform grid."""
        scale = 1.0 / drive.noise.rate
        top = max(float(drive.values.max()), 0.0) + 60.0 * scale
        grid = np.linspace(0.0, top, points)
        survival = np.asarray(drive.survival(grid)) / drive.loss_probability
        self.grid = grid
        self.survival = np.minimum.accumulate(np.clip(survival, 0.0, 1.0))

    def sample(self, rng: np.random.Generator, size: Any) -> np.ndarray:
        """Invert the survival function at uniform draws."""
        u = rng.random(size=size)
        draws = np.interp(u, self.survival[::-1], self.grid[::-1])
        return np.maximum(draws, _TINY)


def constrained_severity_sampler(params: ModelParams, i: int):
    """Severity whose survival is ``Pr[l_i > x] / <n_i>`` in the primary model.

    Args:
        params: Model parameters of a loop-free process
        i: Process index

    Returns:
        A sampler with a ``sample(rng, size)`` method

    Raises:
        UnsupportedModelError: If the ancestors of ``i`` form a causal loop
    """
    drive, _ = drive_distribution(params, i)
    if isinstance(drive.noise, ExponentialNoise):
        return ExcessSeverity(drive)
    if drive.loss_probability <= 0:
        raise ParameterError("the process never loses; no severity to sample")
    return TabulatedSeverity(drive)


def mean_severity(params: ModelParams, i: int) -> float:
    """``<l_i> / <n_i>``, the mean severity that keeps the mean loss."""
    drive, _ = drive_distribution(params, i)
    probability = drive.loss_probability
    if probability <= 0:
        raise ParameterError("the process never loses; mean severity undefined")
    return drive.mean / probability


def severity_samplers(params: ModelParams, spec: SeveritySpec) -> List[Any]:
    """One sampler per process for the given severity mode."""
    n = params.n_processes
    if spec.mode is SeverityMode.CONSTRAINED:
        return [constrained_severity_sampler(params, i) for i in range(n)]
    if spec.mode is SeverityMode.MEAN_CONSTRAINED:
        scales = [mean_severity(params, i) / spec.shape for i in range(n)]
        return [FrozenSeverity(gamma(spec.shape, scale=scale)) for scale in scales]
    if spec.constant is not None:
        return [ConstantSeverity(spec.constant)] * n
    return [FrozenSeverity(spec.distribution)] * n


def simulate_alt(
    params: ModelParams,
    severity: SeveritySpec,
    config: SimulationConfig,
    trajectory: int = 0,
) -> LossTrajectory:
    """Simulate the frequency/severity dynamics.

    Uses the noise substreams of the primary dynamics, so the indicator
    pattern equals the support of ``run_trajectory`` with the same seed.

    Args:
        params: Model parameters
        severity: Severity specification
        config: Horizon, seed and initial window
        trajectory: Index of the substream family

    Returns:
        The loss database, tagged with its generating model
    """
    samplers = severity_samplers(params, severity)
    logger.info("simulating %s dynamics", severity.generating_model.value)
    return evolve_trajectory(
        params, config, trajectory, samplers, severity.generating_model
    )


@dataclass(frozen=True)
class MeanCheck:
    """Observed against expected mean of the nonzero losses of one process."""

    process: int
    observed: float
    expected: float
    standard_error: float
    events: int
    passed: bool


def check_mean_constraint(
    db_alt: LossTrajectory, params: ModelParams, tolerance: float = 4.0
) -> Dict[int, MeanCheck]:
    """Check that the mean nonzero loss matches ``<l_i> / <n_i>``.

    Args:
        db_alt: Database of the frequency/severity dynamics
        params: Parameters the expectation is computed from
        tolerance: Allowed deviation in standard errors

    Returns:
        One verdict per process

    Raises:
        DegenerateDataError: If a process has fewer than two nonzero losses
    """
    checks = {}
    for i in range(params.n_processes):
        if not isinstance(params.noise_model(i), ExponentialNoise):
            warnings.warn(
                f"process {i}: the mean severity of a non-exponential noise "
                "may depend on more than its rate",
                stacklevel=2,
            )
        nonzero = db_alt.losses[:, i][db_alt.losses[:, i] > 0]
        if nonzero.size < 2:
            raise DegenerateDataError(
                f"{nonzero.size} nonzero losses", quantity=f"severity[{i}]"
            )
        expected = mean_severity(params, i)
        observed = float(nonzero.mean())
        error = float(nonzero.std(ddof=1) / math.sqrt(nonzero.size))
        passed = abs(observed - expected) <= tolerance * error
        if not passed:
            logger.warning(
                "process %d: mean severity %.6g, expected %.6g", i, observed, expected
            )
        checks[i] = MeanCheck(i, observed, expected, error, nonzero.size, passed)
    return checks


def recover_rate_from_severity(db_alt: LossTrajectory, i: int) -> float:
    """Rate of a free process from a constrained frequency/severity database.

    The mean severity ``z_i(T) / T`` over the loss frequency equals
    ``1 / lambda_i``.
    """
    losses = db_alt.losses[:, i]
    zero_frequency = float(np.count_nonzero(losses == 0)) / losses.size
    return lambda_free(losses.size, float(losses.sum()), zero_frequency)
