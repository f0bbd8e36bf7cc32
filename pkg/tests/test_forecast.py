"""Test split fits, forecast bands and VaR reports."""

import numpy as np
import pytest

from oprisk_dynamics.analytic import VarEstimate
from oprisk_dynamics.errors import (
    InsufficientEventsError,
    ParameterError,
    UnsupportedModelError,
)
from oprisk_dynamics.forecast import (
    SERIES_POINTS,
    ForecastBand,
    band_overlap,
    delta_var,
    forecast_cumulative,
    forecast_times,
    run_forecast,
    split_fit,
    var_report,
    var_table,
)
from oprisk_dynamics.graph import CouplingStructure
from oprisk_dynamics.oprisk_constants import BENCHMARK_HORIZON, BandMethod
from oprisk_dynamics.simulate import SimulationConfig, run_trajectory


def _band(process, mean, sigma, horizon=100):
    times = np.array([horizon // 2, horizon])
    return ForecastBand(
        process,
        times,
        np.array([mean / 2, mean]),
        np.array([sigma / 2, sigma]),
        BandMethod.ANALYTIC,
    )


def test_forecast_times():
    """Test the even grid of forecast steps."""
    times = forecast_times(200_000)
    assert times[0] == 1 and times[-1] == 200_000
    assert len(times) <= SERIES_POINTS
    assert np.all(np.diff(times) > 0)
    np.testing.assert_array_equal(forecast_times(5), [1, 2, 3, 4, 5])
    with pytest.raises(ParameterError):
        forecast_times(0)


def test_band_views():
    """Test the horizon values and the VaR of a band."""
    band = _band(0, 10.0, 2.0)
    assert band.horizon == 100
    assert band.final_mean == 10.0
    assert band.final_sigma == 2.0
    assert band.var(0.999).value == pytest.approx(10.0 + 2.0 * 3.090232, rel=1e-6)
    assert band.density(np.array([10.0]))[0] == pytest.approx(
        1.0 / (2.0 * np.sqrt(2 * np.pi))
    )


def test_band_overlap():
    """Test identical, nested and disjoint one-sigma bands."""
    assert band_overlap(_band(0, 10.0, 1.0), _band(0, 10.0, 1.0)) == pytest.approx(1.0)
    assert band_overlap(_band(0, 10.0, 1.0), _band(0, 10.0, 5.0)) == pytest.approx(1.0)
    assert band_overlap(_band(0, 10.0, 1.0), _band(0, 11.0, 1.0)) == pytest.approx(0.5)
    assert band_overlap(_band(0, 10.0, 1.0), _band(0, 20.0, 1.0)) == 0.0


def test_delta_var():
    """Test the relative VaR difference."""
    assert delta_var(VarEstimate(100.0, 0.99), VarEstimate(90.0, 0.99)) == 0.1


def test_var_table_columns():
    """Test the VaR table against the largest fraction."""
    bands = {
        1.0: {0: _band(0, 10.0, 1.0), 1: _band(1, 5.0, 1.0)},
        0.75: {0: _band(0, 11.0, 1.0), 1: _band(1, 5.0, 1.0)},
    }
    table = var_table(bands, 0.999)
    assert list(table.columns) == ["process", "VaR_f1", "VaR_f075", "delta_VaR_f075"]
    assert table["delta_VaR_f075"].iloc[1] == 0.0
    assert table["VaR_f075"].iloc[0] > table["VaR_f1"].iloc[0]


def test_var_report(benchmark_db, benchmark_structure):
    """Test the VaR of each fit and the table comparing them."""
    full = split_fit(benchmark_db, 1.0, benchmark_structure)
    part = split_fit(benchmark_db, 0.75, benchmark_structure)
    report = var_report({1.0: full, 0.75: part}, benchmark_db.n_steps, 0.999)
    assert set(report.estimates) == {1.0, 0.75}
    assert sorted(report.estimates[0.75]) == [0, 1, 2, 3, 4]
    for i, estimate in report.estimates[1.0].items():
        assert estimate.confidence == 0.999
        assert estimate.value == report.table["VaR_f1"].iloc[i]
    assert (report.table["delta_VaR_f075"] >= 0).all()
    same = var_report({1.0: full, 0.75: full}, benchmark_db.n_steps, 0.999)
    assert (same.table["delta_VaR_f075"] == 0.0).all()
    with pytest.raises(ParameterError):
        var_report({}, benchmark_db.n_steps)


def test_split_fit_arguments(benchmark_db, benchmark_structure):
    """Test the fraction bounds and the minimum fitting length."""
    with pytest.raises(ParameterError):
        split_fit(benchmark_db, 0.0, benchmark_structure)
    with pytest.raises(ParameterError):
        split_fit(benchmark_db, 1.5, benchmark_structure)
    with pytest.raises(InsufficientEventsError):
        split_fit(benchmark_db, 0.0005, benchmark_structure)
    fit = split_fit(benchmark_db, 0.5, benchmark_structure)
    assert fit.n_steps == 25_000


def test_run_forecast(benchmark_db, benchmark_structure):
    """Test the two-fraction protocol on the benchmark database."""
    times = forecast_times(benchmark_db.n_steps, 50)
    report = run_forecast(
        benchmark_db, benchmark_structure, (0.75, 1.0), 0.999, times=times
    )
    assert report.fractions == [1.0, 0.75]
    assert report.horizon == 50_000
    summary = report.summary()
    assert list(summary["process"]) == [0, 1, 2, 3, 4]
    assert (summary["VaR_f1"] > 0).all()
    for band in report.bands[1.0].values():
        assert band.method is BandMethod.ANALYTIC
        assert band.mean_l > 0
    assert set(report.consistent(1.0)) == {0, 1, 2, 3, 4}
    overlap = report.overlap(1.0, 0.75)
    assert all(0.0 <= value <= 1.0 for value in overlap.values())
    assert isinstance(report.overlaps_almost_completely(1.0, 0.75), bool)
    assert set(report.errors) == {1.0, 0.75}
    series = report.plot_series(0.75)
    assert list(series.columns) == ["t", "process", "z_star", "mean", "lower", "upper"]
    assert len(series) == 5 * len(times)
    np.testing.assert_allclose(
        series[series["process"] == 0]["z_star"].iloc[-1],
        benchmark_db.losses[:, 0].sum(),
    )
    density = report.density_series(1.0, points=20)
    assert list(density.columns) == ["process", "z", "density"]
    assert len(density) == 100


@pytest.mark.slow
def test_forecast_at_full_horizon(benchmark_params, benchmark_structure):
    """Test the fitted bands against a full-length realization."""
    db = run_trajectory(benchmark_params, SimulationConfig(BENCHMARK_HORIZON, seed=7))
    report = run_forecast(db, benchmark_structure, (1.0, 0.75), 0.999)
    assert report.horizon == BENCHMARK_HORIZON
    for i, band in report.bands[1.0].items():
        assert abs(db.losses[:, i].sum() - band.final_mean) < band.final_sigma
    assert all(report.consistent(1.0).values())
    assert all(value > 0.2 for value in report.overlap(1.0, 0.75).values())
    assert (report.summary()["delta_VaR_f075"] < 0.1).all()


def test_loop_needs_fallback(loop_params):
    """Test that processes in a loop are simulated or refused."""
    db = run_trajectory(loop_params, SimulationConfig(5000, seed=2))
    structure = CouplingStructure.from_params(loop_params)
    fit = split_fit(db, 1.0, structure, rates=[3.0, 3.0, 4.0])
    times = forecast_times(5000, 10)
    with pytest.raises(UnsupportedModelError):
        forecast_cumulative(fit, 5000, times, mc_fallback=False)
    bands = forecast_cumulative(fit, 5000, times, trajectories=50, seed=3)
    assert {band.method for band in bands.values()} == {BandMethod.MONTE_CARLO}
    assert bands[0].mean_l is None
    assert np.all(np.diff(bands[0].mean) >= 0)
    assert bands[2].final_sigma > 0
