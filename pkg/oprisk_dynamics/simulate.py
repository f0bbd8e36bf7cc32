"""Monte Carlo engine for the equation of motion."""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from .core import LossTrajectory, ModelParams, noise_stream, ramp
from .errors import ContractViolationError, ParameterError
from .oprisk_constants import (
    DEFAULT_SEED,
    NOISE_BLOCK_LENGTH,
    GeneratingModel,
    Origin,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SimulationConfig:
    """Horizon, ensemble size, seed and initial window of a simulation."""

    horizon: int
    n_trajectories: int = 1
    seed: int = DEFAULT_SEED
    initial_condition: Optional[np.ndarray] = None
    block_length: int = NOISE_BLOCK_LENGTH

    def __post_init__(self):
        """Validate the sizes."""
        if self.horizon < 1:
            raise ParameterError(f"horizon must be positive, got {self.horizon}")
        if self.n_trajectories < 1:
            raise ParameterError(
                f"n_trajectories must be positive, got {self.n_trajectories}"
            )
        if self.block_length < 1:
            raise ParameterError("block_length must be positive")

    def initial_window(self, params: ModelParams) -> np.ndarray:
        """Losses of the pseudo-steps ``-W+1..0`` with ``W = max t*``."""
        width = params.max_corr_time
        if self.initial_condition is None:
            return np.zeros((width, params.n_processes))
        window = np.asarray(self.initial_condition, dtype=float)
        if window.shape != (width, params.n_processes):
            raise ParameterError(
                f"initial window must be {width} x {params.n_processes}, "
                f"got {window.shape}"
            )
        if np.any(window < 0):
            raise ParameterError("initial losses must be non-negative")
        return window


@dataclass(frozen=True, eq=False)
class EnsembleResult:
    """Outcome of a batch of independent trajectories.

    ``final_losses`` and ``cumulative`` are ``n_trajectories x N``;
    ``snapshots`` maps each recorded step to the cumulative losses there.
    """

    final_losses: np.ndarray
    cumulative: np.ndarray
    snapshots: Dict[int, np.ndarray]
    horizon: int

    @property
    def n_trajectories(self) -> int:
        """Number of trajectories in the ensemble."""
        return int(self.final_losses.shape[0])


def count_triggers(
    traj: LossTrajectory, i: int, j: int, t: int, t_star: int
) -> int:
    """Count the losses of ``j`` in the steps ``t - t_star .. t - 1``.

    Args:
        traj: Loss trajectory; its initial window counts as history
        i: Influenced process
        j: Influencing process
        t: Step, 1-based
        t_star: Look-back of the coupling

    Returns:
        ``C_ij(t)`` in ``0..t_star``

    Raises:
        ContractViolationError: If the history does not reach ``t - t_star``
    """
    for k in (i, j):
        if not 0 <= k < traj.n_processes:
            raise ParameterError(f"process {k} outside 0..{traj.n_processes - 1}")
    if t < 1 or t > traj.n_steps + 1 or t_star < 0:
        raise ContractViolationError(f"step {t} with look-back {t_star} is invalid")
    earliest = 1 - traj.initial.shape[0]
    if t - t_star < earliest:
        raise ContractViolationError(
            f"C_{i}{j}({t}) needs history from step {t - t_star}, "
            f"available from {earliest}"
        )
    history = np.concatenate([traj.initial[:, j], traj.losses[:, j]])
    offset = traj.initial.shape[0] - 1
    window = history[t - t_star + offset : t - 1 + offset + 1]
    return int(np.count_nonzero(window > 0))


def _trigger_counts(window: np.ndarray, corr_times: np.ndarray) -> np.ndarray:
    """``C[i, j]`` from a window whose last row is step ``t - 1``."""
    n = corr_times.shape[0]
    counts = np.zeros((n, n), dtype=np.int64)
    occurred = window > 0
    for i, j in zip(*np.nonzero(corr_times)):
        start = window.shape[0] - corr_times[i, j]
        counts[i, j] = np.count_nonzero(occurred[start:, j])
    return counts


def _drive(params: ModelParams, counts: np.ndarray, noise: np.ndarray) -> np.ndarray:
    """Argument of the ramp: ``sum_j J_ij C_ij + theta_i + xi_i``."""
    return (params.coupling * counts).sum(axis=-1) + params.theta + noise


def step(
    params: ModelParams, history: np.ndarray, t: int, noise_draws: Sequence[float]
) -> np.ndarray:
    """Advance the equation of motion by one step.

    Args:
        params: Model parameters
        history: Losses of the previous ``max t*`` steps, oldest first
        t: Step being computed (for error messages)
        noise_draws: One strictly positive draw per process

    Returns:
        The N losses of step ``t``
    """
    history = np.asarray(history, dtype=float).reshape(-1, params.n_processes)
    if history.shape[0] < params.max_corr_time:
        raise ContractViolationError(
            f"step {t} needs {params.max_corr_time} steps of history, "
            f"got {history.shape[0]}"
        )
    noise = np.asarray(noise_draws, dtype=float)
    if noise.shape != (params.n_processes,) or np.any(noise <= 0):
        raise ContractViolationError(f"step {t} needs N strictly positive draws")
    counts = _trigger_counts(history, params.corr_times)
    return ramp(_drive(params, counts, noise))


class _Evolver:
    """Evolves a batch of trajectories in lock-step.

    Trigger counts are kept per (i, j) and updated from a ring buffer of
    indicator bits instead of rescanning the history at each step.
    """

    def __init__(
        self,
        params: ModelParams,
        config: SimulationConfig,
        trajectories: range,
        severities: Optional[Sequence] = None,
    ):
        self.params = params
        self.config = config
        self.trajectories = trajectories
        self.severities = severities
        n = params.n_processes
        self.noises = [params.noise_model(p) for p in range(n)]
        self.noise_rngs = [
            [noise_stream(config.seed, k, p) for p in range(n)] for k in trajectories
        ]
        self.severity_rngs = None
        if severities is not None:
            self.severity_rngs = [
                [noise_stream(config.seed, k, p, purpose=1) for p in range(n)]
                for k in trajectories
            ]
        self.width = params.max_corr_time
        self.mask = params.corr_times > 0
        window = config.initial_window(params)
        counts = _trigger_counts(window, params.corr_times)
        size = len(trajectories)
        self.counts = np.broadcast_to(counts, (size, n, n)).copy()
        self.ring = np.zeros((size, self.width + 1, n), dtype=bool)
        for offset, row in enumerate(window):
            step_index = offset - self.width + 1
            self.ring[:, step_index % (self.width + 1), :] = row > 0
        self.columns = np.broadcast_to(np.arange(n), (n, n))

    def _draw_block(self, rngs, samplers, length: int) -> np.ndarray:
        n = self.params.n_processes
        block = np.empty((len(self.trajectories), length, n))
        for row, stream in enumerate(rngs):
            for p in range(n):
                block[row, :, p] = samplers[p].sample(stream[p], length)
        return block

    def run(
        self,
        record_losses: bool = False,
        record_times: Sequence[int] = (),
    ):
        """Evolve to the horizon; return (losses or None, final, cumulative, snaps)."""
        params, config = self.params, self.config
        size, n = len(self.trajectories), params.n_processes
        horizon = config.horizon
        recorded = np.empty((horizon, n)) if record_losses else None
        cumulative = np.zeros((size, n))
        loss = np.zeros((size, n))
        snapshots = {}
        wanted = set(record_times)
        period = self.width + 1
        for start in range(0, horizon, config.block_length):
            length = min(config.block_length, horizon - start)
            noise = self._draw_block(self.noise_rngs, self.noises, length)
            severity = None
            if self.severities is not None:
                severity = self._draw_block(
                    self.severity_rngs, self.severities, length
                )
            for b in range(length):
                t = start + b + 1
                drive = _drive(params, self.counts, noise[:, b, :])
                if severity is None:
                    loss = np.where(drive > 0, drive, 0.0)
                else:
                    loss = np.where(drive > 0, severity[:, b, :], 0.0)
                cumulative += loss
                if recorded is not None:
                    recorded[t - 1] = loss[0]
                if t in wanted:
                    snapshots[t] = cumulative.copy()
                if self.width:
                    occurred = loss > 0
                    self.ring[:, t % period, :] = occurred
                    lag = (t - params.corr_times) % period
                    old = self.ring[:, lag, self.columns]
                    delta = occurred[:, None, :].astype(np.int64) - old
                    self.counts += np.where(self.mask, delta, 0)
        return recorded, loss, cumulative, snapshots


def _simulation_metadata(params: ModelParams, config: SimulationConfig, model, k):
    return {
        "seed": config.seed,
        "trajectory": k,
        "model": model.value,
        "truth": params,
    }


def run_trajectory(
    params: ModelParams, config: SimulationConfig, trajectory: int = 0
) -> LossTrajectory:
    """Simulate one trajectory of the equation of motion.

    Args:
        params: Model parameters
        config: Horizon, seed and initial window
        trajectory: Index of the substream family to use

    Returns:
        The simulated loss database, tagged with seed and truth parameters
    """
    return evolve_trajectory(params, config, trajectory, None, GeneratingModel.PRIMARY)


def evolve_trajectory(
    params: ModelParams,
    config: SimulationConfig,
    trajectory: int,
    severities: Optional[Sequence],
    model: GeneratingModel,
) -> LossTrajectory:
    """Simulate one trajectory, with severities in place of the ramp if given."""
    evolver = _Evolver(params, config, range(trajectory, trajectory + 1), severities)
    logger.info(
        "simulating trajectory %d over %d steps (seed %d)",
        trajectory,
        config.horizon,
        config.seed,
    )
    losses, _, _, _ = evolver.run(record_losses=True)
    return LossTrajectory(
        losses,
        Origin.SIMULATED,
        initial=config.initial_window(params),
        metadata=_simulation_metadata(params, config, model, trajectory),
    )


def _run_chunk(params, config, start, stop, record_times, severities):
    evolver = _Evolver(params, config, range(start, stop), severities)
    _, final, cumulative, snapshots = evolver.run(record_times=record_times)
    return final, cumulative, snapshots


def run_ensemble(
    params: ModelParams,
    config: SimulationConfig,
    record_times: Sequence[int] = (),
    workers: int = 1,
    severities: Optional[Sequence] = None,
) -> EnsembleResult:
    """Simulate ``config.n_trajectories`` independent trajectories.

    Args:
        params: Model parameters
        config: Horizon, ensemble size and seed
        record_times: Steps at which cumulative losses are kept
        workers: Number of worker processes
        severities: Per-process severity samplers for the frequency/severity
            dynamics; ``None`` runs the equation of motion

    Returns:
        Final-step losses, cumulative losses and snapshots of every trajectory
    """
    times = sorted({int(t) for t in record_times})
    if times and not 1 <= times[0] <= times[-1] <= config.horizon:
        raise ParameterError(f"record times must lie in 1..{config.horizon}")
    total = config.n_trajectories
    bounds = np.linspace(0, total, max(1, min(workers, total)) + 1).astype(int)
    chunks = [(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    logger.info(
        "simulating %d trajectories over %d steps in %d chunk(s)",
        total,
        config.horizon,
        len(chunks),
    )
    if len(chunks) == 1:
        parts = [_run_chunk(params, config, 0, total, times, severities)]
    else:
        with ProcessPoolExecutor(max_workers=len(chunks)) as executor:
            futures = [
                executor.submit(_run_chunk, params, config, a, b, times, severities)
                for a, b in chunks
            ]
            parts = [future.result() for future in futures]
    snapshots = {
        t: np.concatenate([part[2][t] for part in parts]) for t in times
    }
    return EnsembleResult(
        final_losses=np.concatenate([part[0] for part in parts]),
        cumulative=np.concatenate([part[1] for part in parts]),
        snapshots=snapshots,
        horizon=config.horizon,
    )


def cumulative_loss(traj: LossTrajectory, i: int, t: int) -> float:
    """Return ``z_i(t)``, the sum of the losses of ``i`` over steps ``1..t``."""
    if not 0 <= i < traj.n_processes:
        raise ParameterError(f"process {i} outside 0..{traj.n_processes - 1}")
    if not 0 <= t <= traj.n_steps:
        raise ParameterError(f"step {t} outside 0..{traj.n_steps}")
    return float(np.sum(traj.losses[:t, i]))


def cumulative_series(traj: LossTrajectory) -> np.ndarray:
    """Return ``z_i(t)`` for every step and process as a T x N array."""
    return np.cumsum(traj.losses, axis=0)


def trajectory_list(
    params: ModelParams, config: SimulationConfig, count: int
) -> List[LossTrajectory]:
    """Simulate ``count`` trajectories from consecutive substream families."""
    return [run_trajectory(params, config, k) for k in range(count)]
