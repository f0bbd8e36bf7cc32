"""Domain types, the ramp nonlinearity and the noise of the equation of motion."""

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ParameterError, UnsupportedModelError
from .oprisk_constants import GeneratingModel, Origin

ArrayLike = Union[float, np.ndarray]


def ramp(x: ArrayLike) -> ArrayLike:
    """Return ``x`` where it is positive and 0 elsewhere.

    Args:
        x: A finite real or an array of them

    Returns:
        The ramp of ``x``, with the same shape
    """
    if np.ndim(x) == 0:
        return float(x) if x > 0 else 0.0
    return np.where(x > 0, x, 0.0)


def _readonly(values: Any, dtype) -> np.ndarray:
    array = np.array(values, dtype=dtype)
    array.setflags(write=False)
    return array


class NoiseModel(ABC):
    """Distribution of the strictly positive noise of one process."""

    supports_analytic = False

    @property
    @abstractmethod
    def rate(self) -> float:
        """Inverse of the mean of the noise."""

    @abstractmethod
    def sample(self, rng: np.random.Generator, size: Any) -> np.ndarray:
        """Draw strictly positive samples.

        Args:
            rng: Generator owning the substream
            size: Output shape

        Returns:
            Array of samples
        """

    @abstractmethod
    def tail_probability(self, threshold: ArrayLike) -> ArrayLike:
        """Return ``Pr[xi > threshold]``."""

    def loss_probability(self, shift: ArrayLike) -> ArrayLike:
        """Return ``Pr[shift + xi > 0]``, the loss probability of a free process."""
        return self.tail_probability(-np.asarray(shift, dtype=float))

    def moment(self, order: int, shift: ArrayLike) -> ArrayLike:
        """Return ``E[ramp(shift + xi)**order]``."""
        raise UnsupportedModelError(
            f"{type(self).__name__} has no analytic moments; use Monte Carlo"
        )


class ExponentialNoise(NoiseModel):
    """Exponential noise with density ``rate * exp(-rate * xi)``."""

    supports_analytic = True

    def __init__(self, rate: float):
        """Initialize the noise.

        Args:
            rate: Positive rate (1/currency)
        """
        if not rate > 0 or not math.isfinite(rate):
            raise ParameterError(f"noise rate must be positive, got {rate}")
        self._rate = float(rate)

    @property
    def rate(self) -> float:
        """Rate of the exponential."""
        return self._rate

    def __repr__(self) -> str:
        """Return a short representation."""
        return f"ExponentialNoise(rate={self._rate!r})"

    def __eq__(self, other: object) -> bool:
        """Compare by rate."""
        return isinstance(other, ExponentialNoise) and other._rate == self._rate

    def __hash__(self) -> int:
        """Hash by rate."""
        return hash(("exponential", self._rate))

    def sample(self, rng: np.random.Generator, size: Any) -> np.ndarray:
        """Draw exponential samples, bounded away from zero."""
        draws = rng.exponential(1.0 / self._rate, size=size)
        return np.maximum(draws, np.finfo(float).tiny)

    def tail_probability(self, threshold: ArrayLike) -> ArrayLike:
        """Return ``exp(-rate * threshold)`` above zero and 1 below."""
        result = np.exp(-self._rate * np.maximum(threshold, 0.0))
        return float(result) if np.ndim(result) == 0 else result

    def moment(self, order: int, shift: ArrayLike) -> ArrayLike:
        """Closed forms of ``E[ramp(shift + xi)**order]`` for order 1 and 2."""
        lam = self._rate
        x = np.asarray(shift, dtype=float)
        below = np.exp(lam * np.minimum(x, 0.0))
        if order == 1:
            result = np.where(x < 0, below / lam, x + 1.0 / lam)
        elif order == 2:
            result = np.where(
                x < 0, 2.0 * below / lam**2, x**2 + 2.0 * x / lam + 2.0 / lam**2
            )
        else:
            raise ParameterError(f"unsupported moment order {order}")
        return float(result) if result.ndim == 0 else result


class UniformNoise(NoiseModel):
    """Uniform noise on ``(low, high]``, available to Monte Carlo only."""

    def __init__(self, low: float, high: float):
        """Initialize the noise.

        Args:
            low: Lower end of the support, non-negative
            high: Upper end of the support, above ``low``
        """
        if low < 0 or not high > low:
            raise ParameterError(f"need 0 <= low < high, got ({low}, {high})")
        self.low = float(low)
        self.high = float(high)

    @property
    def rate(self) -> float:
        """Inverse of the mean."""
        return 2.0 / (self.low + self.high)

    def __repr__(self) -> str:
        """Return a short representation."""
        return f"{type(self).__name__}(low={self.low!r}, high={self.high!r})"

    def sample(self, rng: np.random.Generator, size: Any) -> np.ndarray:
        """Draw uniform samples on the open-below support."""
        draws = self.high - (self.high - self.low) * rng.random(size=size)
        return np.maximum(draws, np.finfo(float).tiny)

    def tail_probability(self, threshold: ArrayLike) -> ArrayLike:
        """Return the uniform survival function."""
        x = np.asarray(threshold, dtype=float)
        result = np.clip((self.high - x) / (self.high - self.low), 0.0, 1.0)
        return float(result) if result.ndim == 0 else result


def sample_noise(rate: float, rng_stream: np.random.Generator) -> float:
    """Draw one exponential noise value.

    Args:
        rate: Positive rate of the exponential
        rng_stream: Deterministically seeded generator

    Returns:
        A strictly positive draw
    """
    return float(ExponentialNoise(rate).sample(rng_stream, None))


def noise_tail_probability(rate: float, threshold: float) -> float:
    """Return ``Pr[xi > threshold]`` for exponential noise of the given rate."""
    return ExponentialNoise(rate).tail_probability(threshold)


def noise_stream(
    seed: int, trajectory: int, process: int, purpose: int = 0
) -> np.random.Generator:
    """Return the substream of one (trajectory, process) pair.

    Substreams are derived from the master seed by spawn keys on a
    counter-based generator, so a trajectory draws the same numbers whatever
    batch or worker evaluates it.

    Args:
        seed: Master seed
        trajectory: Trajectory index
        process: Process index
        purpose: 0 for the noise, 1 for severities

    Returns:
        A Philox-backed generator
    """
    sequence = np.random.SeedSequence(
        entropy=seed, spawn_key=(trajectory, process, purpose)
    )
    return np.random.Generator(np.random.Philox(sequence))


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Parameters of the equation of motion.

    ``coupling[i, j]`` is the influence of process ``j`` on process ``i`` and
    ``corr_times[i, j]`` the look-back of that influence; look-backs of zero
    couplings are stored as 0.
    """

    coupling: np.ndarray
    theta: np.ndarray
    noise_rates: np.ndarray
    corr_times: np.ndarray
    noise: Optional[Tuple[NoiseModel, ...]] = None

    def __post_init__(self):
        """Validate and freeze the arrays."""
        theta = _readonly(self.theta, float).reshape(-1)
        n = theta.size
        if n < 1:
            raise ParameterError("need at least one process")
        coupling = _readonly(self.coupling, float)
        corr = np.array(self.corr_times, dtype=np.int64)
        rates = _readonly(self.noise_rates, float).reshape(-1)
        if coupling.shape != (n, n) or corr.shape != (n, n) or rates.size != n:
            raise ParameterError(
                f"inconsistent shapes: theta {n}, coupling {coupling.shape}, "
                f"corr_times {corr.shape}, noise_rates {rates.size}"
            )
        if not np.all(np.isfinite(coupling)) or not np.all(np.isfinite(theta)):
            raise ParameterError("coupling and theta must be finite")
        if not np.all(rates > 0) or not np.all(np.isfinite(rates)):
            raise ParameterError(f"noise rates must be positive, got {rates}")
        linked = coupling != 0
        if np.any(corr[linked] < 1):
            raise ParameterError("every nonzero coupling needs a look-back >= 1")
        corr[~linked] = 0
        corr.setflags(write=False)
        if self.noise is not None and len(self.noise) != n:
            raise ParameterError(f"need {n} noise models, got {len(self.noise)}")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "coupling", coupling)
        object.__setattr__(self, "noise_rates", rates)
        object.__setattr__(self, "corr_times", corr)
        if self.noise is not None:
            object.__setattr__(self, "noise", tuple(self.noise))

    @classmethod
    def from_edges(
        cls,
        theta: Sequence[float],
        noise_rates: Sequence[float],
        edges: Mapping[Tuple[int, int], Tuple[float, int]],
        noise: Optional[Sequence[NoiseModel]] = None,
    ) -> "ModelParams":
        """Build parameters from sparse ``(i, j) -> (J_ij, t*_ij)`` entries."""
        n = len(theta)
        coupling = np.zeros((n, n))
        corr = np.zeros((n, n), dtype=np.int64)
        for (i, j), (value, steps) in edges.items():
            if not (0 <= i < n and 0 <= j < n):
                raise ParameterError(f"edge ({i}, {j}) outside {n} processes")
            coupling[i, j] = value
            corr[i, j] = steps
        return cls(coupling, theta, noise_rates, corr, noise)

    @property
    def n_processes(self) -> int:
        """Number of processes N."""
        return int(self.theta.size)

    @property
    def max_corr_time(self) -> int:
        """Length of the initial window the dynamics needs."""
        return int(self.corr_times.max(initial=0))

    def parents(self, i: int) -> List[int]:
        """Processes influencing process ``i``."""
        return [int(j) for j in np.flatnonzero(self.coupling[i])]

    def is_free(self, i: int) -> bool:
        """Whether process ``i`` is influenced by no process."""
        return not np.any(self.coupling[i])

    def noise_model(self, i: int) -> NoiseModel:
        """Noise of process ``i``, exponential unless overridden."""
        if self.noise is not None:
            return self.noise[i]
        return ExponentialNoise(self.noise_rates[i])

    def edges(self) -> Dict[Tuple[int, int], Tuple[float, int]]:
        """Sparse view ``(i, j) -> (J_ij, t*_ij)`` of the nonzero couplings."""
        rows, cols = np.nonzero(self.coupling)
        return {
            (int(i), int(j)): (float(self.coupling[i, j]), int(self.corr_times[i, j]))
            for i, j in zip(rows, cols)
        }

    def with_process(
        self,
        i: int,
        theta: float,
        rate: float,
        coupling_row: Optional[Mapping[int, float]] = None,
    ) -> "ModelParams":
        """Return a copy with the parameters of process ``i`` replaced."""
        new_theta = self.theta.copy()
        new_theta[i] = theta
        new_rates = self.noise_rates.copy()
        new_rates[i] = rate
        new_coupling = self.coupling.copy()
        for j, value in (coupling_row or {}).items():
            if self.coupling[i, j] == 0 and value != 0:
                raise ParameterError(f"({i}, {j}) is not an edge of the structure")
            new_coupling[i, j] = value
        return replace(
            self, theta=new_theta, noise_rates=new_rates, coupling=new_coupling
        )


@dataclass(frozen=True, eq=False)
class LossTrajectory:
    """A T x N grid of non-negative losses, steps 1..T in rows 0..T-1.

    ``initial`` holds the pseudo-steps ``-W+1..0`` that precede the first
    step; ingested databases have an empty initial window.
    """

    losses: np.ndarray
    origin: Origin = Origin.SIMULATED
    initial: Optional[np.ndarray] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        """Validate and freeze the grid."""
        losses = _readonly(self.losses, float)
        if losses.ndim != 2 or losses.shape[0] < 1 or losses.shape[1] < 1:
            raise ParameterError("losses must be a non-empty T x N grid")
        if not np.all(np.isfinite(losses)) or np.any(losses < 0):
            raise ParameterError("losses must be finite and non-negative")
        if self.initial is None:
            initial = np.zeros((0, losses.shape[1]))
        else:
            initial = np.array(self.initial, dtype=float).reshape(
                -1, losses.shape[1]
            )
            if np.any(initial < 0):
                raise ParameterError("initial window must be non-negative")
        initial.setflags(write=False)
        object.__setattr__(self, "losses", losses)
        object.__setattr__(self, "initial", initial)

    @property
    def n_steps(self) -> int:
        """Number of time steps T."""
        return int(self.losses.shape[0])

    @property
    def n_processes(self) -> int:
        """Number of processes N."""
        return int(self.losses.shape[1])

    @property
    def generating_model(self) -> Optional[GeneratingModel]:
        """Dynamics recorded in the metadata, if any."""
        value = self.metadata.get("model")
        return GeneratingModel(value) if value else None

    @property
    def truth(self) -> Optional[ModelParams]:
        """Generating parameters carried by a simulated database."""
        return self.metadata.get("truth")

    def truncate(self, n_steps: int) -> "LossTrajectory":
        """Keep the first ``n_steps`` steps and the initial window."""
        if not 1 <= n_steps <= self.n_steps:
            raise ParameterError(f"cannot keep {n_steps} of {self.n_steps} steps")
        return replace(self, losses=self.losses[:n_steps])
