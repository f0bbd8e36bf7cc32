"""Loss database CSV files, model configuration files and reports."""

import io
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
import yaml

from .analytic import MomentReport
from .core import LossTrajectory, ModelParams
from .errors import FormatError, OpRiskError
from .estimate import EstimationResult
from .graph import CouplingStructure
from .oprisk_constants import (
    AMOUNT_FORMAT,
    BENCHMARK_CORR_TIME,
    BENCHMARK_COUPLING,
    BENCHMARK_FRACTIONS,
    BENCHMARK_HORIZON,
    BENCHMARK_RATES,
    BENCHMARK_THETA,
    DATABASE_HEADER,
    DEFAULT_CONFIDENCE,
    DEFAULT_SEED,
    DEFAULT_TRAJECTORIES,
    Origin,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def params_to_dict(params: ModelParams) -> Dict[str, Any]:
    """Sparse, YAML-ready form of a parameter set."""
    edges = params.edges()
    return {
        "n_processes": params.n_processes,
        "theta": [float(v) for v in params.theta],
        "noise_rates": [float(v) for v in params.noise_rates],
        "coupling": [[i, j, value] for (i, j), (value, _) in sorted(edges.items())],
        "corr_times": [[i, j, steps] for (i, j), (_, steps) in sorted(edges.items())],
    }


def _triples(
    data: Dict[str, Any], key: str, n: int, kind
) -> Dict[Tuple[int, int], Any]:
    entries = {}
    for entry in data.get(key) or []:
        if not isinstance(entry, (list, tuple)) or len(entry) != 3:
            raise FormatError(f"{key} entries must be [i, j, value], got {entry!r}")
        i, j, value = int(entry[0]), int(entry[1]), kind(entry[2])
        if not (0 <= i < n and 0 <= j < n):
            raise FormatError(f"{key} entry ({i}, {j}) outside {n} processes")
        if (i, j) in entries:
            raise FormatError(f"duplicate {key} entry ({i}, {j})")
        entries[(i, j)] = value
    return entries


def _vector(data: Dict[str, Any], key: str, n: int) -> List[float]:
    values = data.get(key)
    if values is None:
        raise FormatError(f"missing key {key!r}")
    if np.isscalar(values):
        values = [values] * n
    if len(values) != n:
        raise FormatError(f"{key} needs {n} entries, got {len(values)}")
    return [float(v) for v in values]


def structure_from_dict(data: Dict[str, Any]) -> CouplingStructure:
    """Zero pattern and look-backs declared by the ``corr_times`` triples."""
    n = int(data.get("n_processes", 0))
    if n < 1:
        raise FormatError("n_processes must be a positive integer")
    corr = np.zeros((n, n), dtype=np.int64)
    for (i, j), steps in _triples(data, "corr_times", n, int).items():
        corr[i, j] = steps
    try:
        return CouplingStructure(corr > 0, corr)
    except OpRiskError as error:
        raise FormatError(str(error)) from error


def params_from_dict(data: Dict[str, Any]) -> ModelParams:
    """Build parameters from their sparse form.

    Raises:
        FormatError: If a coupling has no look-back or a value is invalid
    """
    n = int(data.get("n_processes", 0))
    if n < 1:
        raise FormatError("n_processes must be a positive integer")
    couplings = _triples(data, "coupling", n, float)
    corr_times = _triples(data, "corr_times", n, int)
    missing = sorted(set(couplings) - set(corr_times))
    if missing:
        raise FormatError(f"couplings without a look-back: {missing}")
    edges = {
        edge: (value, corr_times[edge])
        for edge, value in couplings.items()
        if value != 0
    }
    try:
        return ModelParams.from_edges(
            _vector(data, "theta", n), _vector(data, "noise_rates", n), edges
        )
    except OpRiskError as error:
        raise FormatError(str(error)) from error


@dataclass(frozen=True)
class RunOptions:
    """Ensemble size, VaR confidence and fit fractions of a configuration."""

    trajectories: int = DEFAULT_TRAJECTORIES
    confidence: float = DEFAULT_CONFIDENCE
    fractions: Tuple[float, ...] = BENCHMARK_FRACTIONS

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunOptions":
        """Read the options of a configuration mapping, defaults for the rest.

        Raises:
            FormatError: If a value is malformed or out of range
        """
        try:
            options = cls(
                trajectories=int(data.get("trajectories", DEFAULT_TRAJECTORIES)),
                confidence=float(data.get("confidence", DEFAULT_CONFIDENCE)),
                fractions=tuple(
                    float(f) for f in data.get("fractions", BENCHMARK_FRACTIONS)
                ),
            )
        except (TypeError, ValueError) as error:
            raise FormatError(f"malformed run options: {error}") from error
        if options.trajectories < 1:
            raise FormatError("trajectories must be positive")
        if not 0.0 < options.confidence < 1.0:
            raise FormatError(
                f"confidence must lie in (0, 1), got {options.confidence}"
            )
        if not options.fractions or not all(0.0 < f <= 1.0 for f in options.fractions):
            raise FormatError(f"fractions must lie in (0, 1], got {options.fractions}")
        return options


@dataclass(frozen=True, eq=False)
class ModelConfig:
    """Contents of a model configuration file."""

    params: ModelParams
    horizon: int = BENCHMARK_HORIZON
    seed: int = DEFAULT_SEED
    trajectories: int = DEFAULT_TRAJECTORIES
    confidence: float = DEFAULT_CONFIDENCE
    fractions: Tuple[float, ...] = BENCHMARK_FRACTIONS

    @property
    def structure(self) -> CouplingStructure:
        """Zero pattern and look-backs of the parameters."""
        return CouplingStructure.from_params(self.params)

    @property
    def options(self) -> RunOptions:
        """Ensemble size, confidence and fractions."""
        return RunOptions(self.trajectories, self.confidence, self.fractions)

    def to_dict(self) -> Dict[str, Any]:
        """YAML-ready form."""
        data = params_to_dict(self.params)
        data.update(
            horizon=self.horizon,
            seed=self.seed,
            trajectories=self.trajectories,
            confidence=self.confidence,
            fractions=list(self.fractions),
        )
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ModelConfig":
        """Parse the YAML form; unknown keys are rejected."""
        known = {
            "n_processes",
            "theta",
            "noise_rates",
            "coupling",
            "corr_times",
            "horizon",
            "seed",
            "trajectories",
            "confidence",
            "fractions",
        }
        unknown = sorted(set(data) - known)
        if unknown:
            raise FormatError(f"unknown configuration keys: {unknown}")
        options = RunOptions.from_dict(data)
        try:
            return cls(
                params=params_from_dict(data),
                horizon=int(data.get("horizon", BENCHMARK_HORIZON)),
                seed=int(data.get("seed", DEFAULT_SEED)),
                trajectories=options.trajectories,
                confidence=options.confidence,
                fractions=options.fractions,
            )
        except (TypeError, ValueError) as error:
            if isinstance(error, OpRiskError):
                raise
            raise FormatError(f"malformed configuration: {error}") from error


def benchmark_params() -> ModelParams:
    """The five-process scenario with every subgraph class up to a chain."""
    coupling = np.array(BENCHMARK_COUPLING)
    corr = np.where(coupling != 0, BENCHMARK_CORR_TIME, 0)
    return ModelParams(coupling, BENCHMARK_THETA, BENCHMARK_RATES, corr)


def benchmark_config() -> ModelConfig:
    """Configuration of the benchmark scenario with its default horizon."""
    return ModelConfig(benchmark_params())


def _read_mapping(path: PathLike) -> Dict[str, Any]:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as error:
        raise FormatError(f"{path}: invalid YAML: {error}") from error
    if not isinstance(data, dict):
        raise FormatError(f"{path}: expected a mapping at the top level")
    return data


def load_config(path: PathLike) -> ModelConfig:
    """Read a YAML model configuration.

    Raises:
        FormatError: If the file is not valid YAML or misses required keys
    """
    return ModelConfig.from_dict(_read_mapping(path))


def load_structure(path: PathLike) -> CouplingStructure:
    """Read only the zero pattern and look-backs of a configuration file.

    Values of theta, the rates and the couplings may be absent, so the file
    can describe the structure of a database whose parameters are unknown.
    """
    return structure_from_dict(_read_mapping(path))


def load_run_options(path: PathLike) -> RunOptions:
    """Read the trajectories, confidence and fractions of a configuration."""
    return RunOptions.from_dict(_read_mapping(path))


def save_config(config: ModelConfig, path: PathLike):
    """Write a model configuration as YAML."""
    Path(path).write_text(yaml.safe_dump(config.to_dict(), sort_keys=False))


def _metadata_lines(traj: LossTrajectory) -> List[str]:
    lines = [
        f"n_processes={traj.n_processes}",
        f"n_steps={traj.n_steps}",
        f"origin={traj.origin.value}",
    ]
    for key in ("seed", "trajectory", "model"):
        if traj.metadata.get(key) is not None:
            lines.append(f"{key}={traj.metadata[key]}")
    if traj.truth is not None:
        truth = yaml.safe_dump(
            params_to_dict(traj.truth), default_flow_style=True, width=2**31
        ).strip()
        lines.append(f"truth={truth}")
    return [f"# {line}" for line in lines]


def save_database(traj: LossTrajectory, path: PathLike):
    """Write the nonzero losses as ``t,process,amount`` rows.

    Args:
        traj: Loss trajectory
        path: Destination CSV file
    """
    steps, processes = np.nonzero(traj.losses)
    rows = pd.DataFrame(
        {
            "t": steps + 1,
            "process": processes,
            "amount": traj.losses[steps, processes],
        },
        columns=list(DATABASE_HEADER),
    )
    buffer = io.StringIO()
    rows.to_csv(buffer, index=False, float_format=AMOUNT_FORMAT)
    text = "\n".join(_metadata_lines(traj)) + "\n" + buffer.getvalue()
    Path(path).write_text(text)
    logger.info("wrote %d losses to %s", len(rows), path)


def _read_metadata(text: str) -> Dict[str, str]:
    metadata = {}
    for line in text.splitlines():
        if not line.startswith("#"):
            continue
        key, sep, value = line[1:].strip().partition("=")
        if not sep:
            raise FormatError(f"metadata line without '=': {line!r}")
        metadata[key.strip()] = value.strip()
    return metadata


def load_database(path: PathLike, n_processes: Optional[int] = None) -> LossTrajectory:
    """Read a loss database into a rectangular trajectory.

    Absent (t, process) pairs are zero losses. The declared ``n_steps`` and
    ``n_processes`` fix the grid; without them the largest indices do.

    Args:
        path: CSV file
        n_processes: Number of processes if the file does not declare it

    Returns:
        The trajectory with its metadata

    Raises:
        FormatError: On duplicate rows, non-numeric or non-positive amounts,
            or indices outside the declared grid
    """
    text = Path(path).read_text()
    metadata = _read_metadata(text)
    try:
        rows = pd.read_csv(
            io.StringIO(text),
            comment="#",
            dtype={"t": "int64", "process": "int64"},
            float_precision="round_trip",
        )
    except (ValueError, pd.errors.ParserError) as error:
        raise FormatError(f"{path}: {error}") from error
    if tuple(rows.columns) != DATABASE_HEADER:
        raise FormatError(f"{path}: header must be {','.join(DATABASE_HEADER)}")
    if rows[["t", "process"]].duplicated().any():
        first = rows[rows[["t", "process"]].duplicated()].iloc[0]
        raise FormatError(
            f"{path}: duplicate row for t={first.t}, process={first.process}"
        )
    amounts = pd.to_numeric(rows["amount"], errors="coerce").astype(float)
    if not np.isfinite(amounts.to_numpy()).all():
        raise FormatError(f"{path}: amounts must be finite numbers")
    rows["amount"] = amounts
    if not (rows["amount"] > 0).all():
        raise FormatError(f"{path}: amounts must be strictly positive")
    if (rows["t"] < 1).any() or (rows["process"] < 0).any():
        raise FormatError(f"{path}: steps start at 1 and processes at 0")
    n_steps = int(metadata.get("n_steps", rows["t"].max() if len(rows) else 0))
    n = int(metadata.get("n_processes", n_processes or 0))
    if not n:
        n = int(rows["process"].max()) + 1 if len(rows) else 0
    if n_steps < 1 or n < 1:
        raise FormatError(f"{path}: cannot size an empty database without metadata")
    if (rows["t"] > n_steps).any():
        raise FormatError(f"{path}: step beyond the declared T={n_steps}")
    if (rows["process"] >= n).any():
        raise FormatError(f"{path}: process beyond the declared N={n}")
    losses = np.zeros((n_steps, n))
    losses[rows["t"].to_numpy() - 1, rows["process"].to_numpy()] = rows["amount"]
    extra: Dict[str, Any] = {}
    for key in ("seed", "trajectory"):
        if key in metadata:
            extra[key] = int(metadata[key])
    if "model" in metadata:
        extra["model"] = metadata["model"]
    if "truth" in metadata:
        extra["truth"] = params_from_dict(yaml.safe_load(metadata["truth"]))
    origin = Origin(metadata.get("origin", Origin.INGESTED.value))
    return LossTrajectory(losses, origin, metadata=extra)


def write_series(frame: pd.DataFrame, path: PathLike):
    """Write a report table as CSV with exact amounts."""
    frame.to_csv(path, index=False, float_format=AMOUNT_FORMAT)


def moment_report_to_dict(report: MomentReport, confidence: float) -> Dict[str, Any]:
    """YAML-ready form of a moment report with the VaR of each process."""
    processes = []
    for moments in report.processes:
        processes.append(
            {
                "process": moments.process,
                "mean_l": float(moments.mean_l),
                "var_l": float(moments.var_l),
                "loss_probability": float(moments.loss_probability),
                "mean_z": float(moments.mean_z(report.horizon)),
                "var_z": float(moments.var_z(report.horizon)),
                "var": float(moments.var(report.horizon, confidence).value),
                "computed_via": moments.computed_via,
            }
        )
    return {
        "horizon": report.horizon,
        "confidence": confidence,
        "processes": processes,
        "unsolved": {int(i): reason for i, reason in report.unsolved.items()},
    }


def estimation_to_dict(result: EstimationResult) -> Dict[str, Any]:
    """YAML-ready form of an estimation result, candidates included."""
    couplings = []
    for (i, j), estimate in sorted(result.couplings.items()):
        couplings.append(
            {
                "edge": [i, j],
                "aggregate": float(estimate.aggregate),
                "candidates": {
                    int(c): float(v) for c, v in estimate.candidates.items()
                },
                "events": {int(c): int(n) for c, n in estimate.events.items()},
                "skipped": {int(c): r for c, r in estimate.skipped.items()},
            }
        )
    return {
        "n_steps": result.n_steps,
        "theta": [float(v) for v in result.theta],
        "noise_rates": [float(v) for v in result.rates],
        "rates_estimated": [bool(v) for v in result.rates_estimated],
        "couplings": couplings,
        "low_confidence": sorted(result.low_confidence),
        "infeasible": sorted(result.infeasible),
        "diagnostics": {k: list(v) for k, v in sorted(result.diagnostics.items())},
    }


def save_report(data: Dict[str, Any], path: PathLike):
    """Write a report mapping as YAML."""
    Path(path).write_text(yaml.safe_dump(data, sort_keys=False))
