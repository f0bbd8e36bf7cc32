"""Test the frequency/severity dynamics."""

import numpy as np
import pytest
from scipy.stats import expon, ks_2samp, kstest, lognorm

from oprisk_dynamics.altmodel import (
    ExcessSeverity,
    SeveritySpec,
    TabulatedSeverity,
    check_mean_constraint,
    mean_severity,
    recover_rate_from_severity,
    simulate_alt,
)
from oprisk_dynamics.analytic import DriveDistribution, drive_distribution
from oprisk_dynamics.core import (
    ExponentialNoise,
    LossTrajectory,
    ModelParams,
    UniformNoise,
)
from oprisk_dynamics.errors import (
    DegenerateDataError,
    ParameterError,
    UnsupportedModelError,
)
from oprisk_dynamics.estimate import estimate_all
from oprisk_dynamics.oprisk_constants import GeneratingModel, SeverityMode
from oprisk_dynamics.simulate import SimulationConfig, run_trajectory


def test_indicators_match_primary(benchmark_params):
    """Test that the loss pattern is the support of the primary dynamics."""
    config = SimulationConfig(3000, seed=6)
    primary = run_trajectory(benchmark_params, config)
    for spec in (
        SeveritySpec(SeverityMode.CONSTRAINED),
        SeveritySpec(SeverityMode.MEAN_CONSTRAINED),
        SeveritySpec(SeverityMode.ARBITRARY, constant=2.5),
    ):
        alt = simulate_alt(benchmark_params, spec, config)
        np.testing.assert_array_equal(alt.losses > 0, primary.losses > 0)
        assert alt.generating_model is spec.generating_model


def test_arbitrary_constant_severity(benchmark_params):
    """Test that every loss equals the fixed severity."""
    spec = SeveritySpec(SeverityMode.ARBITRARY, constant=2.5)
    alt = simulate_alt(benchmark_params, spec, SimulationConfig(1000, seed=1))
    assert set(np.unique(alt.losses)) <= {0.0, 2.5}
    assert alt.generating_model is GeneratingModel.ALT_ARBITRARY


def test_arbitrary_distribution(benchmark_params):
    """Test that severities drawn from a scipy law stay positive."""
    spec = SeveritySpec(SeverityMode.ARBITRARY, distribution=lognorm(0.5))
    alt = simulate_alt(benchmark_params, spec, SimulationConfig(2000, seed=2))
    assert np.all(alt.losses[alt.losses > 0] > 0)


def test_severity_spec_validation():
    """Test the mode-specific fields."""
    with pytest.raises(ParameterError):
        SeveritySpec(SeverityMode.ARBITRARY)
    with pytest.raises(ParameterError):
        SeveritySpec(SeverityMode.ARBITRARY, distribution=lognorm(0.5), constant=1.0)
    with pytest.raises(ParameterError):
        SeveritySpec(SeverityMode.ARBITRARY, constant=-1.0)
    with pytest.raises(ParameterError):
        SeveritySpec(SeverityMode.MEAN_CONSTRAINED, shape=0.0)


def test_mean_severity_of_free_process(benchmark_params):
    """Test that a free exponential process has mean severity 1 / rate."""
    assert mean_severity(benchmark_params, 0) == pytest.approx(0.5)
    assert mean_severity(benchmark_params, 1) == pytest.approx(1.0 / 3.0)


def test_excess_and_tabulated_samplers_agree():
    """Test both constrained samplers against the exact mean severity."""
    drive = DriveDistribution(
        np.array([-1.0, 0.5]), np.array([0.7, 0.3]), ExponentialNoise(2.0)
    )
    expected = drive.mean / drive.loss_probability
    rng = np.random.default_rng(5)
    for sampler in (ExcessSeverity(drive), TabulatedSeverity(drive)):
        draws = sampler.sample(rng, 40_000)
        assert np.all(draws > 0)
        error = draws.std() / np.sqrt(draws.size)
        assert abs(draws.mean() - expected) < 5 * error


def test_excess_sampler_on_benchmark_chain(benchmark_params):
    """Test that the chain process gets a valid sampler."""
    drive, _ = drive_distribution(benchmark_params, 3)
    sampler = ExcessSeverity(drive)
    assert sampler.probabilities.sum() == pytest.approx(1.0)


def test_mean_constraint_holds(benchmark_params):
    """Test the mean check on a mean-constrained database."""
    spec = SeveritySpec(SeverityMode.MEAN_CONSTRAINED)
    alt = simulate_alt(benchmark_params, spec, SimulationConfig(30_000, seed=4))
    checks = check_mean_constraint(alt, benchmark_params, tolerance=5.0)
    assert set(checks) == {0, 1, 2, 3, 4}
    assert all(check.passed for check in checks.values())
    assert checks[0].expected == pytest.approx(0.5)


def test_mean_constraint_needs_losses(benchmark_params):
    """Test that a process with fewer than two losses is degenerate."""
    db = LossTrajectory(np.zeros((10, 5)))
    with pytest.raises(DegenerateDataError):
        check_mean_constraint(db, benchmark_params)


def test_mean_constraint_warns_for_other_noise():
    """Test that a non-exponential noise triggers a warning."""
    params = ModelParams.from_edges([-0.5], [1.0], {}, noise=[UniformNoise(0.0, 2.0)])
    db = LossTrajectory(np.array([[1.0], [0.0], [2.0]]))
    with pytest.warns(UserWarning):
        with pytest.raises(UnsupportedModelError):
            check_mean_constraint(db, params)


def test_constrained_severity_laws(benchmark_params):
    """Test the excess law of a free process and the per-step loss law."""
    config = SimulationConfig(30_000, seed=12)
    spec = SeveritySpec(SeverityMode.CONSTRAINED)
    alt = simulate_alt(benchmark_params, spec, config, trajectory=1)
    nonzero = alt.losses[alt.losses[:, 1] > 0, 1]
    bound = 2.0 / np.sqrt(nonzero.size)
    assert kstest(nonzero, expon(scale=1.0 / 3.0).cdf).statistic < bound
    primary = run_trajectory(benchmark_params, config)
    statistic = ks_2samp(primary.losses[:, 2], alt.losses[:, 2]).statistic
    assert statistic < 0.03


def test_rate_from_constrained_severity(benchmark_params):
    """Test that a free process keeps its rate under constrained severities."""
    spec = SeveritySpec(SeverityMode.CONSTRAINED)
    alt = simulate_alt(benchmark_params, spec, SimulationConfig(20_000, seed=8))
    assert recover_rate_from_severity(alt, 0) == pytest.approx(2.0, rel=0.1)


def test_arbitrary_severity_needs_rates(benchmark_params, benchmark_structure):
    """Test that rates are not derived from arbitrary severities."""
    spec = SeveritySpec(SeverityMode.ARBITRARY, constant=1.0)
    alt = simulate_alt(benchmark_params, spec, SimulationConfig(20_000, seed=3))
    with pytest.raises(UnsupportedModelError):
        estimate_all(alt, benchmark_structure)
    result = estimate_all(alt, benchmark_structure, rates=[2.0, 3.0, 5.0, 5.0, 5.0])
    assert np.all(result.theta < 0)
