"""Test loss database files, configuration files and reports."""

import numpy as np
import pandas as pd
import pytest
import yaml
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oprisk_dynamics.analytic import moment_report
from oprisk_dynamics.core import LossTrajectory
from oprisk_dynamics.database import (
    ModelConfig,
    RunOptions,
    benchmark_config,
    estimation_to_dict,
    load_config,
    load_database,
    load_run_options,
    load_structure,
    moment_report_to_dict,
    params_from_dict,
    params_to_dict,
    save_config,
    save_database,
    save_report,
    write_series,
)
from oprisk_dynamics.errors import FormatError
from oprisk_dynamics.estimate import estimate_all
from oprisk_dynamics.oprisk_constants import Origin
from oprisk_dynamics.simulate import SimulationConfig, run_trajectory


def test_database_roundtrip_is_lossless(benchmark_params, tmp_path):
    """Test that every amount and the truth survive a save and load."""
    traj = run_trajectory(benchmark_params, SimulationConfig(400, seed=13), 1)
    path = tmp_path / "losses.csv"
    save_database(traj, path)
    loaded = load_database(path)
    np.testing.assert_array_equal(loaded.losses, traj.losses)
    assert loaded.origin is Origin.SIMULATED
    assert loaded.metadata["seed"] == 13
    assert loaded.metadata["trajectory"] == 1
    assert loaded.generating_model is traj.generating_model
    np.testing.assert_array_equal(loaded.truth.coupling, benchmark_params.coupling)
    np.testing.assert_array_equal(loaded.truth.corr_times, benchmark_params.corr_times)


loss_grids = arrays(
    float,
    st.tuples(st.integers(1, 12), st.integers(1, 4)),
    elements=st.one_of(st.just(0.0), st.floats(1e-12, 1e12)),
).filter(lambda grid: grid.any())


@settings(
    max_examples=1000,
    deadline=None,
    suppress_health_check=[HealthCheck.function_scoped_fixture],
)
@given(loss_grids)
def test_any_grid_survives_a_roundtrip(tmp_path, losses):
    """Test that sparse rows and metadata restore every amount exactly."""
    path = tmp_path / "grid.csv"
    save_database(LossTrajectory(losses, origin=Origin.INGESTED), path)
    loaded = load_database(path)
    assert loaded.losses.shape == losses.shape
    np.testing.assert_array_equal(loaded.losses, losses)


def test_database_layout(table_db, tmp_path):
    """Test the header, the metadata lines and the sparse rows."""
    path = tmp_path / "table.csv"
    save_database(table_db, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "# n_processes=5"
    assert "# origin=ingested" in lines
    rows = [line for line in lines if not line.startswith("#")]
    assert rows[0] == "t,process,amount"
    assert rows[1:] == ["3,2,1.5", "4,2,0.25", "5,1,2", "5,3,0.75", "6,0,3"]


def _write(path, text):
    path.write_text(text)
    return path


def test_ingested_database_sizes(tmp_path):
    """Test that a file without metadata is sized by its largest indices."""
    path = _write(tmp_path / "raw.csv", "t,process,amount\n2,1,0.5\n4,0,1.25\n")
    db = load_database(path)
    assert db.losses.shape == (4, 2)
    assert db.origin is Origin.INGESTED
    assert db.losses[3, 0] == 1.25
    assert db.truth is None
    wider = load_database(path, n_processes=3)
    assert wider.n_processes == 3


@pytest.mark.parametrize(
    "body",
    [
        "t,process,amount\n1,0,1.0\n1,0,2.0\n",
        "t,process,amount\n1,0,-1.0\n",
        "t,process,amount\n1,0,0\n",
        "t,process,amount\n1,0,abc\n",
        "t,process,amount\n1,0,inf\n",
        "t,process,amount\n1,0,\n2,0,1.0\n",
        "t,process,amount\n0,0,1.0\n",
        "time,process,amount\n1,0,1.0\n",
        "# n_steps=2\n# n_processes=1\nt,process,amount\n3,0,1.0\n",
        "# n_steps=2\n# n_processes=1\nt,process,amount\n1,1,1.0\n",
        "# n_steps\nt,process,amount\n1,0,1.0\n",
        "t,process,amount\n",
    ],
)
def test_malformed_databases(tmp_path, body):
    """Test that malformed files raise a format error."""
    with pytest.raises(FormatError):
        load_database(_write(tmp_path / "bad.csv", body))


def test_config_roundtrip(tmp_path):
    """Test that a configuration survives a save and load."""
    config = ModelConfig(benchmark_config().params, horizon=1234, seed=5)
    path = tmp_path / "model.yaml"
    save_config(config, path)
    loaded = load_config(path)
    assert loaded.horizon == 1234
    assert loaded.seed == 5
    assert loaded.fractions == (1.0, 0.75)
    np.testing.assert_array_equal(loaded.params.coupling, config.params.coupling)
    assert loaded.structure.look_back(4) == 5


def test_sparse_params_form(benchmark_params):
    """Test the sparse triples of the parameters."""
    data = params_to_dict(benchmark_params)
    assert data["coupling"][0] == [2, 0, 0.1]
    assert data["corr_times"][0] == [2, 0, 5]
    rebuilt = params_from_dict(data)
    np.testing.assert_array_equal(rebuilt.theta, benchmark_params.theta)


def test_scalar_vectors_are_broadcast():
    """Test that a scalar theta applies to every process."""
    params = params_from_dict({"n_processes": 3, "theta": -1.0, "noise_rates": 2.0})
    np.testing.assert_array_equal(params.theta, [-1.0, -1.0, -1.0])
    assert params.max_corr_time == 0


@pytest.mark.parametrize(
    "data",
    [
        {"n_processes": 1, "theta": [-1.0], "noise_rates": [1.0], "colour": 3},
        {"n_processes": 2, "theta": [-1.0], "noise_rates": [1.0, 1.0]},
        {
            "n_processes": 2,
            "theta": -1.0,
            "noise_rates": 1.0,
            "coupling": [[1, 0, 0.1]],
        },
        {"n_processes": 0, "theta": [], "noise_rates": []},
        {"n_processes": 1, "noise_rates": [1.0]},
        {"n_processes": 1, "theta": [-1.0], "noise_rates": [0.0]},
        {"n_processes": 1, "theta": [-1.0], "noise_rates": [1.0], "confidence": 1.5},
        {"n_processes": 1, "theta": [-1.0], "noise_rates": [1.0], "fractions": [0]},
        {"n_processes": 1, "theta": [-1.0], "noise_rates": [1.0], "fractions": 0.5},
        {"n_processes": 1, "theta": [-1.0], "noise_rates": [1.0], "trajectories": 0},
    ],
)
def test_malformed_configs(data):
    """Test that inconsistent configurations raise a format error."""
    with pytest.raises(FormatError):
        ModelConfig.from_dict(data)


def test_invalid_yaml(tmp_path):
    """Test that unparsable or non-mapping files raise a format error."""
    with pytest.raises(FormatError):
        load_config(_write(tmp_path / "a.yaml", "theta: [1, 2\n"))
    with pytest.raises(FormatError):
        load_config(_write(tmp_path / "b.yaml", "- 1\n- 2\n"))


def test_load_structure_without_values(tmp_path):
    """Test that a structure file needs only the look-backs."""
    path = _write(
        tmp_path / "structure.yaml",
        "n_processes: 3\ncorr_times:\n  - [1, 0, 4]\n  - [2, 1, 2]\n",
    )
    structure = load_structure(path)
    assert structure.parents(1) == [0]
    assert structure.look_back(2) == 2
    assert structure.max_corr_time == 4


def test_reports_are_plain_yaml(benchmark_params, benchmark_db, tmp_path):
    """Test that both report mappings serialize with the safe dumper."""
    moments = moment_report_to_dict(moment_report(benchmark_params, 100), 0.999)
    assert moments["processes"][3]["computed_via"] == "chain_of_free_root"
    structure = load_structure(_write(tmp_path / "s.yaml", _structure_text()))
    estimate = estimation_to_dict(estimate_all(benchmark_db, structure))
    assert [entry["edge"] for entry in estimate["couplings"]][0] == [2, 0]
    path = tmp_path / "report.yaml"
    save_report({"moments": moments, "estimate": estimate}, path)
    loaded = yaml.safe_load(path.read_text())
    assert loaded["estimate"]["n_steps"] == benchmark_db.n_steps


def _structure_text():
    edges = ["[2, 0, 5]", "[3, 2, 5]", "[4, 0, 5]", "[4, 1, 5]"]
    return "n_processes: 5\ncorr_times:\n" + "".join(f"  - {e}\n" for e in edges)


def test_write_series(tmp_path):
    """Test that series keep every digit."""
    frame = pd.DataFrame({"t": [1, 2], "mean": [0.1, 1 / 3]})
    path = tmp_path / "series.csv"
    write_series(frame, path)
    loaded = pd.read_csv(path, float_precision="round_trip")
    assert loaded["mean"].iloc[1] == 1 / 3


def test_load_run_options(tmp_path):
    """Test that a structure file may carry the run options."""
    path = _write(
        tmp_path / "structure.yaml",
        "n_processes: 2\ncorr_times:\n  - [1, 0, 3]\n"
        "confidence: 0.999\nfractions: [1.0, 0.5]\n",
    )
    options = load_run_options(path)
    assert options.confidence == 0.999
    assert options.fractions == (1.0, 0.5)
    assert options.trajectories == RunOptions().trajectories
    assert load_run_options(_write(tmp_path / "bare.yaml", "n_processes: 2\n")) == (
        RunOptions()
    )


def test_config_options_fill_defaults():
    """Test that a configuration without options takes the defaults."""
    data = {"n_processes": 1, "theta": -1.0, "noise_rates": 1.0, "trajectories": 50}
    config = ModelConfig.from_dict(data)
    assert config.options == RunOptions(trajectories=50)
