"""Test the self-checks and the benchmark protocol."""

import pytest

from oprisk_dynamics.validation import (
    check_engine_replay,
    check_enumeration,
    check_estimator_exactness,
    check_free_moments,
    check_noise_law,
    check_roundtrip,
    check_severity_law,
    check_var_quantile,
    reproduce_benchmark,
    run_validation,
    summarize_benchmark,
)


def test_exact_checks_pass(benchmark_params):
    """Test the checks that involve no sampling."""
    for result in (
        check_free_moments(),
        check_enumeration(benchmark_params),
        check_estimator_exactness(),
        check_var_quantile(),
    ):
        assert result.passed, result.detail


def test_sampled_checks_pass(benchmark_params):
    """Test the replay, noise and roundtrip checks on short runs."""
    assert check_engine_replay(benchmark_params, 5, horizon=100).passed
    assert check_noise_law(benchmark_params, 5, size=20_000).passed
    assert check_roundtrip(benchmark_params, 5).passed


def test_loop_replay(loop_params):
    """Test the replay check on a graph with a causal loop."""
    assert check_engine_replay(loop_params, 9, horizon=200).passed


@pytest.mark.slow
def test_severity_law(benchmark_params):
    """Test the constrained severities against both references."""
    result = check_severity_law(benchmark_params, 21)
    assert result.passed, result.detail


@pytest.mark.slow
def test_run_validation():
    """Test that every self-check passes with the default seed."""
    results = run_validation()
    assert all(result.passed for result in results), [
        (result.name, result.detail) for result in results if not result.passed
    ]


def test_reproduce_benchmark_table():
    """Test the shape of the benchmark table and of its summary."""
    table = reproduce_benchmark(repeats=2, horizon=40_000, fractions=(1.0, 0.75))
    assert len(table) == 10
    assert set(table["run"]) == {0, 1}
    columns = {"VaR_f1", "delta_VaR_f075", "consistent", "overlap", "delta_theta"}
    assert columns <= set(table.columns)
    assert table["overlap"].between(0.0, 1.0).all()
    summary = summarize_benchmark(table)
    assert list(summary["process"]) == [0, 1, 2, 3, 4]
    assert "delta_theta_median" in summary.columns
    assert summary["consistent_share"].between(0.0, 1.0).all()
    assert "overlap_median" in summary.columns


@pytest.mark.slow
def test_benchmark_protocol_envelope():
    """Test consistency, overlap and VaR stability across 20 realizations."""
    table = reproduce_benchmark(repeats=20, fractions=(1.0, 0.75), workers=2)
    runs = table.groupby("run")
    assert runs["consistent"].all().sum() >= 16
    assert (runs["delta_VaR_f075"].max() < 2e-2).sum() >= 16
    summary = summarize_benchmark(table)
    assert (summary["delta_VaR_f075_median"] < 1e-2).all()
    assert (summary["overlap_median"] > 0.5).all()
    assert (summary["delta_theta_median"] < 0.05).all()
    assert (summary["delta_lambda_median"] < 0.05).all()
