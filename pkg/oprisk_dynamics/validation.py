"""Self-checks of the engine and the benchmark reproduction protocol."""

import logging
import math
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.integrate import quad
from scipy.stats import expon, ks_2samp, kstest

from .altmodel import SeveritySpec, simulate_alt
from .analytic import (
    free_moment,
    gaussian_var,
    moments_general_acyclic,
    solve_moments,
)
from .core import ModelParams, noise_stream
from .database import benchmark_params, load_database, save_database
from .estimate import (
    coupling_from_frequency,
    lambda_free,
    lambda_single_parent,
    theta_from_frequency,
)
from .forecast import run_forecast
from .graph import CouplingStructure
from .oprisk_constants import (
    BENCHMARK_FRACTIONS,
    BENCHMARK_HORIZON,
    DEFAULT_CONFIDENCE,
    DEFAULT_REPEATS,
    DEFAULT_SEED,
    SeverityMode,
)
from .simulate import (
    SimulationConfig,
    count_triggers,
    run_ensemble,
    run_trajectory,
    step,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CheckResult:
    """Outcome of one validation check."""

    name: str
    passed: bool
    detail: str


def _relative(a: float, b: float) -> float:
    return abs(a - b) / max(abs(b), 1e-300)


def check_free_moments() -> CheckResult:
    """Closed-form free moments against numerical integration."""
    worst = 0.0
    for order in (1, 2):
        for shift in (-1.0, -0.3, 0.0, 0.4):
            for rate in (2.0, 5.0):
                integral, _ = quad(
                    lambda xi: (shift + xi) ** order * rate * math.exp(-rate * xi),
                    max(-shift, 0.0),
                    math.inf,
                )
                worst = max(worst, _relative(free_moment(order, shift, rate), integral))
    return CheckResult("free moments", worst < 1e-8, f"max relative error {worst:.2e}")


def check_enumeration(params: ModelParams) -> CheckResult:
    """Closed forms against the general enumeration on every process."""
    worst = 0.0
    for i in range(params.n_processes):
        closed, _ = solve_moments(params, i)
        enumerated = moments_general_acyclic(params, i)
        worst = max(
            worst,
            _relative(closed.mean, enumerated.mean),
            _relative(closed.variance, enumerated.variance),
        )
    return CheckResult(
        "closed forms vs enumeration", worst < 1e-12, f"max relative error {worst:.2e}"
    )


def check_estimator_exactness() -> CheckResult:
    """Estimators fed with exact probabilities return the parameters."""
    theta, rate, coupling, parent_theta, parent_rate = -1.0, 5.0, 0.15, -1.0, 2.0
    base = 1.0 - math.exp(rate * theta)
    errors = [_relative(theta_from_frequency(base, rate), theta)]
    levels = [base]
    for c in range(1, 6):
        frequency = 1.0 - math.exp(rate * (theta + c * coupling))
        levels.append(frequency)
        errors.append(
            _relative(coupling_from_frequency(frequency, c, theta, rate), coupling)
        )
    parent_zero = 1.0 - math.exp(parent_rate * parent_theta)
    parent_mean = free_moment(1, parent_theta, parent_rate)
    errors.append(_relative(lambda_free(1, parent_mean, parent_zero), parent_rate))
    params = ModelParams.from_edges(
        [parent_theta, theta], [parent_rate, rate], {(1, 0): (coupling, 5)}
    )
    moments, _ = solve_moments(params, 1)
    recovered = lambda_single_parent(1, moments.mean, levels, parent_zero)
    errors.append(_relative(recovered, rate))
    worst = max(errors)
    return CheckResult(
        "estimator exactness", worst < 1e-12, f"max relative error {worst:.2e}"
    )


def check_var_quantile() -> CheckResult:
    """The default confidence is the three-sigma level."""
    value = gaussian_var(0.0, 1.0, DEFAULT_CONFIDENCE).value
    return CheckResult("VaR quantile", abs(value - 3.0) < 3e-3, f"factor {value:.6f}")


def check_engine_replay(
    params: ModelParams, seed: int, horizon: int = 300
) -> CheckResult:
    """Batched engine against the one-step reference with the same draws."""
    traj = run_trajectory(params, SimulationConfig(horizon, seed=seed))
    n, width = params.n_processes, params.max_corr_time
    draws = np.stack(
        [
            params.noise_model(p).sample(noise_stream(seed, 0, p), horizon)
            for p in range(n)
        ],
        axis=1,
    )
    history = np.vstack([traj.initial, np.zeros((horizon, n))])
    for t in range(1, horizon + 1):
        window = history[t - 1 : t - 1 + width]
        history[t - 1 + width] = step(params, window, t, draws[t - 1])
    same = np.array_equal(history[width:], traj.losses)
    bounded = all(
        0 <= count_triggers(traj, i, j, t, int(params.corr_times[i, j]))
        <= params.corr_times[i, j]
        for (i, j) in params.edges()
        for t in range(1, horizon + 1)
    )
    return CheckResult(
        "engine replay", same and bounded, "bit-identical" if same else "mismatch"
    )


def check_monte_carlo(
    params: ModelParams, seed: int, trajectories: int, t: int = 100
) -> CheckResult:
    """Analytic means against the ensemble at a fixed step, 4 standard errors."""
    ensemble = run_ensemble(params, SimulationConfig(t, trajectories, seed))
    worst = 0.0
    for i in range(params.n_processes):
        moments, _ = solve_moments(params, i)
        sample = ensemble.final_losses[:, i]
        error = sample.std(ddof=1) / math.sqrt(sample.size)
        worst = max(worst, abs(sample.mean() - moments.mean) / max(error, 1e-300))
    return CheckResult("Monte Carlo agreement", worst < 4.0, f"max {worst:.2f} SE")


def check_alt_indicators(params: ModelParams, seed: int) -> CheckResult:
    """Frequency/severity indicators equal the primary support pattern."""
    config = SimulationConfig(2000, seed=seed)
    primary = run_trajectory(params, config)
    alt = simulate_alt(params, SeveritySpec(SeverityMode.CONSTRAINED), config)
    same = np.array_equal(primary.losses > 0, alt.losses > 0)
    return CheckResult("alt-model indicators", same, "identical" if same else "differ")


def _ks_bound(n: int, m: Optional[int] = None, factor: float = 1.0) -> float:
    # about the 99.9% critical value for independent samples
    effective = n if m is None else n * m / (n + m)
    return 2.0 * factor / math.sqrt(effective)


def check_noise_law(
    params: ModelParams, seed: int, size: int = 100_000
) -> CheckResult:
    """Exponential noise substreams against the analytic CDF."""
    worst = 0.0
    for p in range(params.n_processes):
        draws = params.noise_model(p).sample(noise_stream(seed, 0, p), size)
        scale = 1.0 / params.noise_rates[p]
        worst = max(worst, kstest(draws, expon(scale=scale).cdf).statistic)
    bound = _ks_bound(size)
    return CheckResult("noise law", worst < bound, f"max KS {worst:.4f} < {bound:.4f}")


def check_severity_law(
    params: ModelParams, seed: int, horizon: int = 50_000
) -> CheckResult:
    """Constrained severities against the primary losses and the excess law.

    Per-step losses of every process are compared with a two-sample KS test;
    the nonzero losses of free processes are compared with the exponential
    excess law, which has the rate of the noise.
    """
    config = SimulationConfig(horizon, seed=seed)
    primary = run_trajectory(params, config)
    alt = simulate_alt(
        params, SeveritySpec(SeverityMode.CONSTRAINED), config, trajectory=1
    )
    passed, worst = True, 0.0
    for i in range(params.n_processes):
        statistic = ks_2samp(primary.losses[:, i], alt.losses[:, i]).statistic
        # steps of coupled processes are correlated
        passed &= statistic < _ks_bound(horizon, horizon, factor=2.0)
        worst = max(worst, statistic)
        if params.coupling[i].any():
            continue
        nonzero = alt.losses[alt.losses[:, i] > 0, i]
        excess = expon(scale=1.0 / params.noise_rates[i]).cdf
        statistic = kstest(nonzero, excess).statistic
        passed &= statistic < _ks_bound(nonzero.size)
        worst = max(worst, statistic)
    return CheckResult("severity law", bool(passed), f"max KS {worst:.4f}")


def check_roundtrip(params: ModelParams, seed: int) -> CheckResult:
    """Database save and load reproduce every amount exactly."""
    traj = run_trajectory(params, SimulationConfig(500, seed=seed))
    with tempfile.TemporaryDirectory() as directory:
        path = Path(directory) / "losses.csv"
        save_database(traj, path)
        loaded = load_database(path)
    same = np.array_equal(loaded.losses, traj.losses)
    return CheckResult("database roundtrip", same, "lossless" if same else "lossy")


def run_validation(
    seed: int = DEFAULT_SEED, trajectories: int = 2000
) -> List[CheckResult]:
    """Run every check on the benchmark scenario."""
    params = benchmark_params()
    checks: List[Callable[[], CheckResult]] = [
        check_free_moments,
        lambda: check_enumeration(params),
        check_estimator_exactness,
        check_var_quantile,
        lambda: check_engine_replay(params, seed),
        lambda: check_monte_carlo(params, seed, trajectories),
        lambda: check_noise_law(params, seed),
        lambda: check_alt_indicators(params, seed),
        lambda: check_severity_law(params, seed),
        lambda: check_roundtrip(params, seed),
    ]
    results = []
    for check in checks:
        result = check()
        logger.info("%s: %s", result.name, "ok" if result.passed else "FAILED")
        results.append(result)
    return results


def reproduce_benchmark(
    repeats: int = DEFAULT_REPEATS,
    seed: int = DEFAULT_SEED,
    horizon: int = BENCHMARK_HORIZON,
    fractions: Sequence[float] = BENCHMARK_FRACTIONS,
    confidence: float = DEFAULT_CONFIDENCE,
    workers: int = 1,
) -> pd.DataFrame:
    """Simulate, fit and forecast the benchmark scenario on several realizations.

    Realization ``r`` uses substream family ``r`` of ``seed``.

    Returns:
        One row per realization and process with the VaRs, their relative
        errors, the consistency verdict, the band overlap between the two
        largest fractions and the parameter relative errors
    """
    params = benchmark_params()
    structure = CouplingStructure.from_params(params)
    rows = []
    for run in range(repeats):
        traj = run_trajectory(params, SimulationConfig(horizon, seed=seed), run)
        report = run_forecast(
            traj, structure, fractions, confidence, seed=seed, workers=workers
        )
        summary = report.summary()
        reference = report.fractions[0]
        consistent = report.consistent(reference)
        overlap = (
            report.overlap(reference, report.fractions[1])
            if len(report.fractions) > 1
            else dict.fromkeys(consistent, 1.0)
        )
        errors = report.errors[reference]
        for record in summary.to_dict("records"):
            i = int(record["process"])
            coupling_errors = [
                value for (k, _), value in errors["coupling"].items() if k == i
            ]
            rows.append(
                {
                    "run": run,
                    **record,
                    "consistent": bool(consistent[i]),
                    "overlap": float(overlap[i]),
                    "delta_theta": float(errors["theta"][i]),
                    "delta_lambda": float(errors["rates"][i]),
                    "delta_J_max": max(coupling_errors, default=0.0),
                }
            )
        logger.info("benchmark realization %d of %d done", run + 1, repeats)
    return pd.DataFrame(rows)


def summarize_benchmark(table: pd.DataFrame) -> pd.DataFrame:
    """Median and 10-90 percentile band of every delta column per process."""
    columns = [c for c in table.columns if c.startswith("delta")]
    grouped = table.groupby("process")[columns]
    summary = grouped.median().add_suffix("_median")
    low = grouped.quantile(0.1).add_suffix("_p10")
    high = grouped.quantile(0.9).add_suffix("_p90")
    consistent = table.groupby("process")["consistent"].mean()
    consistent = consistent.rename("consistent_share")
    overlap = table.groupby("process")["overlap"].median().rename("overlap_median")
    return pd.concat([summary, low, high, consistent, overlap], axis=1).reset_index()
