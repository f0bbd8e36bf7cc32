"""Test command line interface."""

import subprocess
import sys

import pytest
import yaml

from oprisk_dynamics.cli import parse_args
from oprisk_dynamics.database import ModelConfig, benchmark_params, save_config

# fmt: off
BENCHMARK_EDGES = [
    "--edge", "2", "0", "5",
    "--edge", "3", "2", "5",
    "--edge", "4", "0", "5",
    "--edge", "4", "1", "5",
]
# fmt: on

LOOP_CONFIG = """\
n_processes: 3
theta: -1.0
noise_rates: [3.0, 3.0, 4.0]
coupling:
  - [0, 1, 0.1]
  - [1, 0, 0.1]
  - [2, 0, 0.2]
corr_times:
  - [0, 1, 2]
  - [1, 0, 2]
  - [2, 0, 3]
"""


def run_cli(*args):
    """Run the package as a module and capture its output."""
    return subprocess.run(
        [sys.executable, "-m", "oprisk_dynamics", *map(str, args)],
        capture_output=True,
        text=True,
    )


@pytest.fixture(scope="module")
def benchmark_csv(tmp_path_factory):
    """Fixture to provide a simulated benchmark database on disk."""
    path = tmp_path_factory.mktemp("cli") / "benchmark.csv"
    result = run_cli("simulate", "--horizon", 50_000, "--seed", 7, "-o", path)
    assert result.returncode == 0, result.stdout
    return path


def test_parse_args_defaults():
    """Test parsing a forecast command with defaults."""
    args = parse_args(["forecast", "losses.csv", "--edge", "1", "0", "3"])
    assert str(args.database) == "losses.csv"
    assert args.edge == [[1, 0, 3]]
    assert args.fraction is None
    assert args.mc_fallback
    assert args.aggregation == "mean"
    assert args.workers == 1


def test_parse_args_all_options():
    """Test parsing a forecast command with all options specified."""
    args = parse_args(
        [
            "-vv",
            "forecast",
            "losses.csv",
            "-c",
            "model.yaml",
            "--rates",
            "2,3.5",
            "--aggregation",
            "sample",
            "--seed",
            "4",
            "-f",
            "1",
            "-f",
            "0.5",
            "--regulatory",
            "--no-mc-fallback",
            "--trajectories",
            "100",
            "-o",
            "out",
        ]
    )
    assert args.verbose == 2
    assert args.rates == [2.0, 3.5]
    assert args.fraction == [1.0, 0.5]
    assert args.regulatory
    assert not args.mc_fallback
    assert args.trajectories == 100
    assert str(args.output_dir) == "out"


@pytest.mark.parametrize(
    "argv",
    [
        ["estimate", "losses.csv"],
        ["forecast", "losses.csv", "--edge", "1", "0", "3", "-f", "0"],
        ["forecast", "losses.csv", "--edge", "1", "0", "3", "-f", "1.5"],
        ["solve", "--confidence", "1.0"],
        ["solve", "--confidence", "0.9", "--regulatory"],
        ["solve", "--horizon", "0"],
        ["simulate", "-o", "x.csv", "--severity", "2.0"],
        ["simulate", "-o", "x.csv", "--model", "alt-arbitrary"],
        ["estimate", "losses.csv", "--edge", "1", "0"],
        ["estimate", "losses.csv", "--edge", "1", "0", "3", "--rates", "a,b"],
        ["reproduce-paper", "--repeats", "0"],
    ],
)
def test_parse_args_invalid(argv):
    """Test that invalid arguments are usage errors."""
    with pytest.raises(SystemExit) as excinfo:
        parse_args(argv)
    assert excinfo.value.code == 2


def test_parse_args_benchmark_alias():
    """Test that the benchmark protocol answers to both names."""
    for name in ("reproduce-paper", "reproduce-benchmark"):
        args = parse_args([name, "--repeats", "3", "--horizon", "1000"])
        assert args.repeats == 3
        assert args.horizon == 1000


def test_cli_solve_uses_config_confidence(tmp_path):
    """Test that the configured confidence applies unless a flag overrides it."""
    config = tmp_path / "model.yaml"
    save_config(ModelConfig(benchmark_params(), horizon=1000, confidence=0.5), config)
    report = tmp_path / "moments.yaml"
    result = run_cli("solve", "-c", config, "-o", report)
    assert result.returncode == 0, result.stdout
    data = yaml.safe_load(report.read_text())
    assert data["confidence"] == 0.5
    for process in data["processes"]:
        assert process["var"] == pytest.approx(process["mean_z"], rel=1e-12)
    result = run_cli("solve", "-c", config, "--confidence", "0.9", "-o", report)
    assert result.returncode == 0, result.stdout
    assert yaml.safe_load(report.read_text())["confidence"] == 0.9


def test_cli_forecast_uses_config_options(benchmark_csv, tmp_path):
    """Test that the configured fractions and confidence drive the forecast."""
    config = tmp_path / "model.yaml"
    options = ModelConfig(benchmark_params(), confidence=0.999, fractions=(1.0, 0.5))
    save_config(options, config)
    result = run_cli("forecast", benchmark_csv, "-c", config)
    assert result.returncode == 0, result.stdout
    assert "confidence 0.999" in result.stdout
    assert "VaR_f05" in result.stdout
    assert "VaR_f075" not in result.stdout
    result = run_cli("forecast", benchmark_csv, "-c", config, "-f", 1, "-f", 0.75)
    assert result.returncode == 0, result.stdout
    assert "VaR_f075" in result.stdout


def test_cli_help():
    """Test that --help produces help output."""
    result = run_cli("--help")
    assert result.returncode == 0
    assert "usage:" in result.stdout.lower()
    for command in ("simulate", "solve", "estimate", "forecast", "validate"):
        assert command in result.stdout


def test_cli_solve(tmp_path):
    """Test the moment table and report of the benchmark scenario."""
    report = tmp_path / "moments.yaml"
    result = run_cli("solve", "--regulatory", "-o", report)
    assert result.returncode == 0
    assert "chain_of_free_root" in result.stdout
    assert "multiple_free_parents" in result.stdout
    data = yaml.safe_load(report.read_text())
    assert data["confidence"] == 0.999
    assert len(data["processes"]) == 5


def test_cli_estimate(benchmark_csv, tmp_path):
    """Test estimation from a simulated database and declared edges."""
    report = tmp_path / "estimate.yaml"
    result = run_cli("estimate", benchmark_csv, *BENCHMARK_EDGES, "-o", report)
    assert result.returncode == 0, result.stdout
    assert "J[3,2]" in result.stdout
    assert "lambda[4]" in result.stdout
    data = yaml.safe_load(report.read_text())
    assert data["n_steps"] == 50_000
    assert all(theta < 0 for theta in data["theta"])


def test_cli_forecast(benchmark_csv, tmp_path):
    """Test that the forecast writes its tables."""
    out = tmp_path / "forecast"
    result = run_cli(
        "forecast", benchmark_csv, *BENCHMARK_EDGES, "-f", 1, "-f", 0.75, "-o", out
    )
    assert result.returncode == 0, result.stdout
    assert "VaR_f075" in result.stdout
    for name in ("summary.csv", "series_f1.csv", "density_f075.csv"):
        assert (out / name).exists()
    assert (out / "estimate_f075.yaml").exists()


def test_cli_nonexistent_database():
    """Test that a missing database produces an error."""
    result = run_cli("estimate", "/nonexistent/losses.csv", "--edge", 1, 0, 2)
    assert result.returncode == 1
    assert "error" in result.stdout.lower()


def test_cli_malformed_database(tmp_path):
    """Test that a malformed database is a format error."""
    path = tmp_path / "bad.csv"
    path.write_text("t,process,amount\n1,0,-2.0\n")
    result = run_cli("estimate", path, "--edge", 1, 0, 2)
    assert result.returncode == 12
    assert "Error [format]" in result.stdout


def test_cli_loop_needs_rates(tmp_path):
    """Test that a causal loop without known rates is unsupported."""
    config = tmp_path / "loop.yaml"
    config.write_text(LOOP_CONFIG)
    db = tmp_path / "loop.csv"
    result = run_cli(
        "simulate", "-c", config, "--horizon", 20_000, "--seed", 3, "-o", db
    )
    assert result.returncode == 0, result.stdout
    result = run_cli("estimate", db, "-c", config)
    assert result.returncode == 11
    assert "Error [unsupported]" in result.stdout
    result = run_cli("estimate", db, "-c", config, "--rates", "3,3,4")
    assert result.returncode == 0, result.stdout


@pytest.mark.slow
def test_cli_validate():
    """Test that the self-checks pass."""
    result = run_cli("validate")
    assert result.returncode == 0, result.stdout
    assert "checks passed" in result.stdout
