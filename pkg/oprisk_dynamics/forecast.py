"""Fit on the first part of a loss database, forecast over the full horizon."""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.stats import norm

from .analytic import VarEstimate, gaussian_var, solve_moments
from .core import LossTrajectory
from .errors import (
    InsufficientEventsError,
    ParameterError,
    ResourceLimitError,
    UnsupportedModelError,
)
from .estimate import EstimationResult, estimate_all
from .graph import CouplingStructure
from .oprisk_constants import (
    BAND_OVERLAP_THRESHOLD,
    BENCHMARK_FRACTIONS,
    DEFAULT_CONFIDENCE,
    DEFAULT_SEED,
    DEFAULT_TRAJECTORIES,
    MIN_EVENT_COUNT,
    Aggregation,
    BandMethod,
)
from .simulate import SimulationConfig, run_ensemble

logger = logging.getLogger(__name__)

# Forecast series are sampled on at most this many steps.
SERIES_POINTS = 1000


def forecast_times(horizon: int, points: int = SERIES_POINTS) -> np.ndarray:
    """Evenly spaced steps in ``1..horizon``, the horizon included."""
    if horizon < 1:
        raise ParameterError(f"horizon must be positive, got {horizon}")
    return np.unique(np.linspace(1, horizon, min(points, horizon)).round().astype(int))


@dataclass(frozen=True, eq=False)
class ForecastBand:
    """Mean and standard deviation of ``z_i(t)`` on a grid of steps."""

    process: int
    times: np.ndarray
    mean: np.ndarray
    sigma: np.ndarray
    method: BandMethod
    mean_l: Optional[float] = None
    var_l: Optional[float] = None

    @property
    def horizon(self) -> int:
        """Last step of the band."""
        return int(self.times[-1])

    @property
    def final_mean(self) -> float:
        """``<z_i(T)>``."""
        return float(self.mean[-1])

    @property
    def final_sigma(self) -> float:
        """``sigma_z_i(T)``."""
        return float(self.sigma[-1])

    def var(self, confidence: float = DEFAULT_CONFIDENCE) -> VarEstimate:
        """Gaussian VaR at the horizon."""
        return gaussian_var(
            self.final_mean,
            self.final_sigma**2,
            confidence,
            self.process,
            self.horizon,
        )

    def density(self, points: np.ndarray) -> np.ndarray:
        """Gaussian density of ``z_i(T)``."""
        return norm.pdf(points, loc=self.final_mean, scale=self.final_sigma)


def split_fit(
    db: LossTrajectory,
    fraction: float,
    structure: CouplingStructure,
    rates: Optional[Sequence[float]] = None,
    aggregation: Aggregation = Aggregation.MEAN,
    seed: Optional[int] = None,
    min_events: int = MIN_EVENT_COUNT,
) -> EstimationResult:
    """Estimate the parameters on the first ``floor(f * T)`` steps.

    Raises:
        ParameterError: If ``fraction`` is outside (0, 1]
        InsufficientEventsError: If the kept steps cannot hold the
            look-back plus ``min_events`` windows
    """
    if not 0.0 < fraction <= 1.0:
        raise ParameterError(f"fraction must lie in (0, 1], got {fraction}")
    kept = math.floor(fraction * db.n_steps)
    if kept <= structure.max_corr_time + min_events:
        raise InsufficientEventsError(
            f"{kept} steps leave too few windows for look-back "
            f"{structure.max_corr_time}"
        )
    logger.info("fitting on %d of %d steps (f=%g)", kept, db.n_steps, fraction)
    return estimate_all(
        db.truncate(kept), structure, rates, aggregation, seed, min_events
    )


def _analytic_band(params, i, times):
    moments, _ = solve_moments(params, i)
    return ForecastBand(
        i,
        times,
        times * moments.mean,
        np.sqrt(times * moments.variance),
        BandMethod.ANALYTIC,
        moments.mean,
        moments.variance,
    )


def forecast_cumulative(
    est: EstimationResult,
    horizon: int,
    times: Optional[np.ndarray] = None,
    mc_fallback: bool = True,
    trajectories: int = DEFAULT_TRAJECTORIES,
    seed: int = DEFAULT_SEED,
    workers: int = 1,
) -> Dict[int, ForecastBand]:
    """Bands of the cumulative losses under the estimated parameters.

    Processes with an exact solution get analytic bands; the others are
    simulated when ``mc_fallback`` is set.

    Args:
        est: Estimated parameters
        horizon: Full horizon T
        times: Steps at which the bands are evaluated
        mc_fallback: Simulate processes without exact moments
        trajectories: Ensemble size of the fallback
        seed: Seed of the fallback
        workers: Worker processes of the fallback

    Returns:
        One band per process

    Raises:
        UnsupportedModelError: If a process has no exact moments and the
            fallback is disabled
    """
    times = forecast_times(horizon) if times is None else np.asarray(times)
    params = est.to_params()
    bands = {}
    pending = []
    for i in range(params.n_processes):
        try:
            bands[i] = _analytic_band(params, i, times)
        except (UnsupportedModelError, ResourceLimitError) as error:
            if not mc_fallback:
                raise
            logger.warning("process %d: %s; simulating instead", i, error)
            pending.append(i)
    if pending:
        config = SimulationConfig(horizon, trajectories, seed)
        ensemble = run_ensemble(params, config, times, workers)
        for i in pending:
            stacked = np.stack([ensemble.snapshots[int(t)][:, i] for t in times])
            bands[i] = ForecastBand(
                i,
                times,
                stacked.mean(axis=1),
                stacked.std(axis=1, ddof=1),
                BandMethod.MONTE_CARLO,
            )
    return bands


def delta_var(reference: VarEstimate, other: VarEstimate) -> float:
    """``|VaR_ref - VaR_other| / VaR_ref``."""
    return abs(reference.value - other.value) / abs(reference.value)


def band_overlap(first: ForecastBand, second: ForecastBand) -> float:
    """Overlap of the two one-sigma bands at the horizon.

    Returns:
        Width of the intersection over the width of the narrower band
    """
    low = max(
        first.final_mean - first.final_sigma, second.final_mean - second.final_sigma
    )
    high = min(
        first.final_mean + first.final_sigma, second.final_mean + second.final_sigma
    )
    narrower = 2.0 * min(first.final_sigma, second.final_sigma)
    if narrower == 0:
        return 1.0 if low <= high else 0.0
    return max(high - low, 0.0) / narrower


def var_table(
    bands: Dict[float, Dict[int, ForecastBand]],
    confidence: float = DEFAULT_CONFIDENCE,
) -> pd.DataFrame:
    """VaR per process and fraction, with the relative error to the first fit.

    Args:
        bands: Forecast bands per fitted fraction; the largest fraction is
            the reference of the relative errors
        confidence: VaR confidence level

    Returns:
        One row per process: ``VaR_f<fraction>`` columns and
        ``delta_VaR_f<fraction>`` for each non-reference fraction
    """
    fractions = sorted(bands, reverse=True)
    reference = fractions[0]
    rows = []
    for i in sorted(bands[reference]):
        row = {"process": i}
        base = bands[reference][i].var(confidence)
        for fraction in fractions:
            estimate = bands[fraction][i].var(confidence)
            row[f"VaR_{_label(fraction)}"] = estimate.value
            if fraction != reference:
                row[f"delta_VaR_{_label(fraction)}"] = delta_var(base, estimate)
        rows.append(row)
    return pd.DataFrame(rows)


class VarReport(NamedTuple):
    """VaR of every fit and the table comparing them."""

    estimates: Dict[float, Dict[int, VarEstimate]]
    table: pd.DataFrame


def var_report(
    fits: Dict[float, EstimationResult],
    horizon: int,
    confidence: float = DEFAULT_CONFIDENCE,
    mc_fallback: bool = True,
    trajectories: int = DEFAULT_TRAJECTORIES,
    seed: int = DEFAULT_SEED,
    workers: int = 1,
) -> VarReport:
    """Gaussian VaR over ``horizon`` under each fitted parameter set.

    Args:
        fits: Estimates per fitted fraction
        horizon: Full horizon T
        confidence: VaR confidence level
        mc_fallback: Simulate processes without exact moments
        trajectories: Ensemble size of the fallback
        seed: Seed of the fallback
        workers: Worker processes of the fallback

    Returns:
        The VaR of each process per fraction and the ``var_table`` of
        relative errors against the largest fraction
    """
    if not fits:
        raise ParameterError("need at least one fit")
    times = np.array([horizon])
    bands = {
        f: forecast_cumulative(
            fit, horizon, times, mc_fallback, trajectories, seed, workers
        )
        for f, fit in fits.items()
    }
    estimates = {
        f: {i: band.var(confidence) for i, band in per_process.items()}
        for f, per_process in bands.items()
    }
    return VarReport(estimates, var_table(bands, confidence))


def _label(fraction: float) -> str:
    return "f" + f"{fraction:g}".replace(".", "")


@dataclass(frozen=True, eq=False)
class ForecastReport:
    """Fits, bands and VaRs of every fraction against the actual losses."""

    horizon: int
    times: np.ndarray
    actual: np.ndarray
    fits: Dict[float, EstimationResult]
    bands: Dict[float, Dict[int, ForecastBand]]
    confidence: float
    errors: Dict[float, Dict[str, object]] = field(default_factory=dict)

    @property
    def fractions(self):
        """Fitted fractions, largest first."""
        return sorted(self.fits, reverse=True)

    def summary(self) -> pd.DataFrame:
        """VaR table with relative errors against the largest fraction."""
        return var_table(self.bands, self.confidence)

    def consistent(self, fraction: float) -> Dict[int, bool]:
        """Whether ``|z*_i(T) - <z_i(T)>| < sigma_z_i(T)`` for each process."""
        return {
            i: abs(self.actual[-1, i] - band.final_mean) < band.final_sigma
            for i, band in self.bands[fraction].items()
        }

    def overlap(self, first: float, second: float) -> Dict[int, float]:
        """Band overlap at the horizon between two fits."""
        return {
            i: band_overlap(self.bands[first][i], self.bands[second][i])
            for i in self.bands[first]
        }

    def overlaps_almost_completely(self, first: float, second: float) -> bool:
        """Whether every overlap exceeds the threshold."""
        return all(
            value > BAND_OVERLAP_THRESHOLD
            for value in self.overlap(first, second).values()
        )

    def plot_series(self, fraction: float) -> pd.DataFrame:
        """Columns ``t, process, z_star, mean, lower, upper`` for plotting."""
        frames = []
        for i, band in sorted(self.bands[fraction].items()):
            frames.append(
                pd.DataFrame(
                    {
                        "t": self.times,
                        "process": i,
                        "z_star": self.actual[:, i],
                        "mean": band.mean,
                        "lower": band.mean - band.sigma,
                        "upper": band.mean + band.sigma,
                    }
                )
            )
        return pd.concat(frames, ignore_index=True)

    def density_series(self, fraction: float, points: int = 200) -> pd.DataFrame:
        """Gaussian density of ``z_i(T)`` over mean +- 4 sigma per process."""
        frames = []
        for i, band in sorted(self.bands[fraction].items()):
            grid = np.linspace(
                band.final_mean - 4 * band.final_sigma,
                band.final_mean + 4 * band.final_sigma,
                points,
            )
            frames.append(
                pd.DataFrame({"process": i, "z": grid, "density": band.density(grid)})
            )
        return pd.concat(frames, ignore_index=True)


def run_forecast(
    db: LossTrajectory,
    structure: CouplingStructure,
    fractions: Sequence[float] = BENCHMARK_FRACTIONS,
    confidence: float = DEFAULT_CONFIDENCE,
    rates: Optional[Sequence[float]] = None,
    aggregation: Aggregation = Aggregation.MEAN,
    seed: int = DEFAULT_SEED,
    min_events: int = MIN_EVENT_COUNT,
    mc_fallback: bool = True,
    trajectories: int = DEFAULT_TRAJECTORIES,
    workers: int = 1,
    times: Optional[np.ndarray] = None,
) -> ForecastReport:
    """Fit every fraction and forecast over the full horizon of ``db``.

    Args:
        db: Loss database
        structure: Zero pattern of ``J`` and look-backs
        fractions: Fractions of the database used for fitting
        confidence: VaR confidence level
        rates: Known noise rates, estimated when omitted
        aggregation: Coupling aggregation
        seed: Seed for sampled aggregation and Monte Carlo bands
        min_events: Low-confidence threshold
        mc_fallback: Simulate processes without exact moments
        trajectories: Ensemble size of the fallback
        workers: Worker processes for the fits and the fallback
        times: Steps of the series, an even grid by default

    Returns:
        The forecast report
    """
    fractions = sorted({float(f) for f in fractions}, reverse=True)
    if not fractions:
        raise ParameterError("need at least one fraction")
    horizon = db.n_steps
    times = forecast_times(horizon) if times is None else np.asarray(times)
    args = (structure, rates, aggregation, seed, min_events)
    if workers > 1 and len(fractions) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(fractions))) as pool:
            futures = {f: pool.submit(split_fit, db, f, *args) for f in fractions}
            fits = {f: future.result() for f, future in futures.items()}
    else:
        fits = {f: split_fit(db, f, *args) for f in fractions}
    bands = {
        f: forecast_cumulative(
            fits[f], horizon, times, mc_fallback, trajectories, seed, workers
        )
        for f in fractions
    }
    actual = np.cumsum(db.losses, axis=0)[times - 1]
    errors = {}
    if db.truth is not None:
        errors = {f: fits[f].relative_errors(db.truth) for f in fractions}
    return ForecastReport(horizon, times, actual, fits, bands, confidence, errors)
