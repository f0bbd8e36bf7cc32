"""Frequentist recovery of theta, J and lambda from a loss database.

Conditional frequencies of "no loss" are collected over moving windows:
the window of steps ``t - t*_ij .. t - 1`` fixes the trigger counts and the
outcome ``l_i(t)`` of the following step decides the zero count.

The frequencies only pin down the products ``lambda_i * theta_i`` and
``lambda_i * J_ij``; the mean loss per step of a loop-free process is
``1 / lambda_i`` times the mean of the same process at unit rate with those
products as parameters. ``lambda_i`` follows from matching that mean with
``z_i(T) / T``.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from .analytic import binomial_weights, solve_moments
from .core import LossTrajectory, ModelParams
from .errors import (
    DataError,
    DegenerateDataError,
    InfeasibleEstimateError,
    InsufficientEventsError,
    OpRiskError,
    ParameterError,
    UnsupportedModelError,
)
from .graph import CouplingStructure, classify_subgraph
from .oprisk_constants import (
    MIN_EVENT_COUNT,
    Aggregation,
    GeneratingModel,
    SubgraphKind,
)

logger = logging.getLogger(__name__)

Edge = Tuple[int, int]


@dataclass(frozen=True, eq=False)
class EventCounts:
    """Counts of the conditioning events and of their zero-loss outcomes.

    ``edge_total[i, j, c]`` counts the steps with ``C_ij = c`` and every
    other trigger count of ``i`` at zero; level ``c = 0`` is not used there
    and belongs to ``base_total``.
    """

    structure: CouplingStructure
    base_total: np.ndarray
    base_zero: np.ndarray
    edge_total: np.ndarray
    edge_zero: np.ndarray
    n_steps: int

    def __add__(self, other: "EventCounts") -> "EventCounts":
        """Pool the counts of two scans over the same structure."""
        if not isinstance(other, EventCounts):
            return NotImplemented
        same = np.array_equal(
            self.structure.pattern, other.structure.pattern
        ) and np.array_equal(self.structure.corr_times, other.structure.corr_times)
        if not same:
            raise ParameterError("cannot pool counts of different structures")
        return EventCounts(
            self.structure,
            self.base_total + other.base_total,
            self.base_zero + other.base_zero,
            self.edge_total + other.edge_total,
            self.edge_zero + other.edge_zero,
            self.n_steps + other.n_steps,
        )

    def base_frequency(self, i: int) -> float:
        """Frequency of ``l_i = 0`` given ``C_ij = 0`` for every ``j``."""
        total = int(self.base_total[i])
        if total == 0:
            raise InsufficientEventsError(
                "no window with all trigger counts at zero", quantity=f"theta[{i}]"
            )
        return int(self.base_zero[i]) / total

    def edge_frequency(self, i: int, j: int, c: int) -> Optional[float]:
        """Frequency of ``l_i = 0`` given ``C_ij = c`` alone, if observed."""
        total = int(self.edge_total[i, j, c])
        if total == 0:
            return None
        return int(self.edge_zero[i, j, c]) / total


def scan_events(db: LossTrajectory, structure: CouplingStructure) -> EventCounts:
    """Count every conditioning event of the database in one pass.

    Args:
        db: Loss database; its initial window is ignored
        structure: Zero pattern of ``J`` and the look-backs, known a priori

    Returns:
        The event counts

    Raises:
        DataError: If the database is not longer than the largest look-back
    """
    n = structure.n_processes
    if db.n_processes != n:
        raise ParameterError(
            f"database has {db.n_processes} processes, structure has {n}"
        )
    width = structure.max_corr_time
    if db.n_steps <= width:
        raise DataError(
            f"database of {db.n_steps} steps is too short for look-back {width}"
        )
    occurred = db.losses > 0
    prefix = np.zeros((db.n_steps + 1, n), dtype=np.int64)
    np.cumsum(occurred, axis=0, out=prefix[1:])
    base_total = np.zeros(n, dtype=np.int64)
    base_zero = np.zeros(n, dtype=np.int64)
    edge_total = np.zeros((n, n, width + 1), dtype=np.int64)
    edge_zero = np.zeros((n, n, width + 1), dtype=np.int64)
    for i in range(n):
        steps = np.arange(structure.look_back(i) + 1, db.n_steps + 1)
        zero = ~occurred[steps - 1, i]
        parents = structure.parents(i)
        triggers = {
            j: prefix[steps - 1, j] - prefix[steps - 1 - structure.corr_times[i, j], j]
            for j in parents
        }
        quiet = {j: triggers[j] == 0 for j in parents}
        base = np.ones(steps.size, dtype=bool)
        for j in parents:
            base &= quiet[j]
        base_total[i] = np.count_nonzero(base)
        base_zero[i] = np.count_nonzero(base & zero)
        for j in parents:
            alone = np.ones(steps.size, dtype=bool)
            for k in parents:
                if k != j:
                    alone &= quiet[k]
            levels = triggers[j][alone]
            edge_total[i, j] = np.bincount(levels, minlength=width + 1)
            edge_zero[i, j] = np.bincount(levels[zero[alone]], minlength=width + 1)
            edge_total[i, j, 0] = 0
            edge_zero[i, j, 0] = 0
    logger.debug("scanned %d steps of %d processes", db.n_steps, n)
    return EventCounts(
        structure, base_total, base_zero, edge_total, edge_zero, db.n_steps
    )


def theta_from_frequency(zero_frequency: float, rate: float) -> float:
    """Invert ``Pr[l_i = 0 | no trigger] = 1 - exp(rate * theta)``.

    Raises:
        DegenerateDataError: If no loss was ever observed (frequency 1)
        InfeasibleEstimateError: If every step had a loss (frequency 0)
    """
    if not rate > 0:
        raise ParameterError(f"noise rate must be positive, got {rate}")
    if zero_frequency >= 1.0:
        raise DegenerateDataError("no loss without triggers; theta diverges")
    if zero_frequency <= 0.0:
        raise InfeasibleEstimateError(
            "a loss at every untriggered step; non-negative theta is not estimable"
        )
    return math.log1p(-zero_frequency) / rate


def coupling_from_frequency(
    zero_frequency: float, c: int, theta_hat: float, rate: float
) -> float:
    """Invert ``Pr[l_i = 0 | C_ij = c] = 1 - exp(rate * (theta + c * J))``."""
    if c < 1:
        raise ParameterError(f"trigger level must be positive, got {c}")
    if not 0.0 < zero_frequency < 1.0:
        raise ParameterError(f"frequency must lie in (0, 1), got {zero_frequency}")
    return (-theta_hat + math.log1p(-zero_frequency) / rate) / c


def lambda_free(n_steps: int, cumulative: float, zero_frequency: float) -> float:
    """Rate of a free process: ``T / z(T) * (1 - frequency)``."""
    if cumulative <= 0:
        raise DegenerateDataError("cumulative loss is zero; the rate diverges")
    return n_steps / cumulative * (1.0 - zero_frequency)


def lambda_single_parent(
    n_steps: int,
    cumulative: float,
    level_frequencies: Sequence[float],
    parent_zero_frequency: float,
) -> float:
    """Rate of a process whose only parent is free.

    Args:
        n_steps: Length T of the database
        cumulative: ``z_i(T)``
        level_frequencies: Frequency of ``l_i = 0`` for each trigger level
            ``c = 0..t*``; level 0 is the untriggered frequency
        parent_zero_frequency: Untriggered zero frequency of the parent

    Returns:
        ``T / z * sum_c (1 - f_c) Binom(c; t*, 1 - f_parent)``
    """
    if cumulative <= 0:
        raise DegenerateDataError("cumulative loss is zero; the rate diverges")
    steps = len(level_frequencies) - 1
    weights = binomial_weights(steps, 1.0 - parent_zero_frequency)
    complement = 1.0 - np.asarray(level_frequencies, dtype=float)
    return n_steps / cumulative * math.fsum(weights * complement)


@dataclass(frozen=True)
class CouplingEstimate:
    """Per-level candidates of one coupling and their aggregate."""

    edge: Edge
    candidates: Dict[int, float]
    aggregate: float
    events: Dict[int, int]
    skipped: Dict[int, str] = field(default_factory=dict)


def _aggregate(
    candidates: Dict[int, float],
    events: Dict[int, int],
    aggregation: Aggregation,
    rng: Optional[np.random.Generator],
) -> float:
    levels = sorted(candidates)
    values = np.array([candidates[c] for c in levels])
    if aggregation is Aggregation.WEIGHTED:
        return float(np.average(values, weights=[events[c] for c in levels]))
    if aggregation is Aggregation.SAMPLE:
        rng = rng if rng is not None else np.random.default_rng()
        return float(rng.choice(values))
    return float(values.mean())


def estimate_theta(counts: EventCounts, i: int, rate: float) -> float:
    """Estimate ``theta_i`` from the untriggered zero frequency.

    Args:
        counts: Event counts of the database
        i: Process index
        rate: Noise rate of ``i``

    Returns:
        ``theta_i``, always negative
    """
    quantity = f"theta[{i}]"
    try:
        return theta_from_frequency(counts.base_frequency(i), rate)
    except OpRiskError as error:
        if error.quantity:
            raise
        raise type(error)(str(error), quantity=quantity) from error


def estimate_coupling(
    counts: EventCounts,
    theta_hat: float,
    rate: float,
    edge: Edge,
    aggregation: Aggregation = Aggregation.MEAN,
    rng: Optional[np.random.Generator] = None,
) -> CouplingEstimate:
    """Estimate ``J_ij`` from every usable trigger level.

    Levels without events or with a frequency of 0 or 1 are skipped and
    reported.

    Args:
        counts: Event counts of the database
        theta_hat: Estimate of ``theta_i``
        rate: Noise rate of ``i``
        edge: ``(i, j)``
        aggregation: How the per-level candidates are combined
        rng: Generator for ``Aggregation.SAMPLE``

    Returns:
        The candidates and their aggregate

    Raises:
        InsufficientEventsError: If no level is usable
    """
    i, j = edge
    steps = int(counts.structure.corr_times[i, j])
    if steps < 1:
        raise ParameterError(f"({i}, {j}) is not a declared edge")
    candidates, events, skipped = {}, {}, {}
    for c in range(1, steps + 1):
        frequency = counts.edge_frequency(i, j, c)
        events[c] = int(counts.edge_total[i, j, c])
        if frequency is None:
            skipped[c] = "no events"
        elif frequency >= 1.0:
            skipped[c] = "no loss observed"
        elif frequency <= 0.0:
            skipped[c] = "loss at every event"
        else:
            candidates[c] = coupling_from_frequency(frequency, c, theta_hat, rate)
    for c, reason in skipped.items():
        logger.info("J[%d,%d]: level %d skipped (%s)", i, j, c, reason)
    if not candidates:
        raise InsufficientEventsError(
            "no usable trigger level", quantity=f"J[{i},{j}]"
        )
    aggregate = _aggregate(candidates, events, aggregation, rng)
    return CouplingEstimate(edge, candidates, aggregate, events, skipped)


def _unit_rate_params(
    counts: EventCounts, couplings: Dict[Edge, CouplingEstimate]
) -> ModelParams:
    """Parameters at unit rate with ``lambda * theta`` and ``lambda * J``.

    Built from estimates obtained with rate 1, so every loss probability
    and every ratio of means equals that of the real process.
    """
    structure = counts.structure
    n = structure.n_processes
    theta = [theta_from_frequency(counts.base_frequency(i), 1.0) for i in range(n)]
    coupling = np.zeros((n, n))
    for (i, j), estimate in couplings.items():
        coupling[i, j] = estimate.aggregate
    corr = np.where(coupling != 0, structure.corr_times, 0)
    return ModelParams(coupling, theta, np.ones(n), corr)


def estimate_lambda(
    db: LossTrajectory,
    counts: EventCounts,
    i: int,
    couplings: Optional[Dict[Edge, CouplingEstimate]] = None,
) -> float:
    """Estimate the noise rate of a loop-free process.

    Args:
        db: The loss database the counts come from
        counts: Event counts
        i: Process index
        couplings: Coupling estimates at unit rate for the edges in the
            ancestry of ``i``; computed from the counts when omitted

    Returns:
        ``lambda_i``

    Raises:
        UnsupportedModelError: If the ancestors of ``i`` form a causal loop or
            the database comes from the arbitrary-severity dynamics
        DegenerateDataError: If ``z_i(T) = 0``
    """
    quantity = f"lambda[{i}]"
    if db.generating_model is GeneratingModel.ALT_ARBITRARY:
        raise UnsupportedModelError(
            "arbitrary severities break the mean-loss relation", quantity=quantity
        )
    structure = counts.structure
    found = classify_subgraph(structure.graph(), i)
    if found.kind is SubgraphKind.HAS_CAUSAL_LOOP:
        raise UnsupportedModelError(
            "causal loop among the ancestors; supply the rate", quantity=quantity
        )
    cumulative = float(db.losses[:, i].sum())
    if cumulative <= 0:
        raise DegenerateDataError("cumulative loss is zero", quantity=quantity)
    if found.kind is SubgraphKind.FREE:
        return lambda_free(db.n_steps, cumulative, counts.base_frequency(i))
    if couplings is None:
        couplings = _unit_rate_couplings(counts, Aggregation.MEAN, None)
    if found.kind is SubgraphKind.SINGLE_FREE_PARENT:
        (j,) = found.nodes
        return _lambda_single_parent(db, counts, i, j, cumulative, couplings)
    unit = _unit_rate_params(counts, couplings)
    moments, _ = solve_moments(unit, i)
    return db.n_steps / cumulative * moments.mean


def _lambda_single_parent(db, counts, i, j, cumulative, couplings):
    """Per-level frequencies where observed, the aggregate coupling elsewhere."""
    steps = int(counts.structure.corr_times[i, j])
    base = counts.base_frequency(i)
    unit_theta = theta_from_frequency(base, 1.0)
    unit_coupling = couplings[(i, j)].aggregate
    frequencies = [base]
    for c in range(1, steps + 1):
        frequency = counts.edge_frequency(i, j, c)
        if frequency is None or not 0.0 < frequency < 1.0:
            frequency = -math.expm1(min(unit_theta + c * unit_coupling, 0.0))
        frequencies.append(frequency)
    return lambda_single_parent(
        db.n_steps, cumulative, frequencies, counts.base_frequency(j)
    )


def _unit_rate_couplings(
    counts: EventCounts,
    aggregation: Aggregation,
    rng: Optional[np.random.Generator],
) -> Dict[Edge, CouplingEstimate]:
    structure = counts.structure
    couplings = {}
    for i in range(structure.n_processes):
        parents = structure.parents(i)
        if not parents:
            continue
        unit_theta = estimate_theta(counts, i, 1.0)
        for j in parents:
            couplings[(i, j)] = estimate_coupling(
                counts, unit_theta, 1.0, (i, j), aggregation, rng
            )
    return couplings


@dataclass(frozen=True, eq=False)
class EstimationResult:
    """Estimated parameters of every process, with diagnostics.

    ``couplings`` hold the per-level candidates in physical units;
    ``rates_estimated[i]`` tells whether ``rates[i]`` came from the data.
    """

    structure: CouplingStructure
    theta: np.ndarray
    couplings: Dict[Edge, CouplingEstimate]
    rates: np.ndarray
    rates_estimated: np.ndarray
    counts: EventCounts
    n_steps: int
    cumulative: np.ndarray
    low_confidence: Set[str] = field(default_factory=set)
    infeasible: Set[str] = field(default_factory=set)
    diagnostics: Dict[str, List[str]] = field(default_factory=dict)

    def to_params(self) -> ModelParams:
        """Parameters built from the aggregate couplings."""
        n = self.structure.n_processes
        coupling = np.zeros((n, n))
        for (i, j), estimate in self.couplings.items():
            coupling[i, j] = estimate.aggregate
        corr = np.where(coupling != 0, self.structure.corr_times, 0)
        return ModelParams(coupling, self.theta, self.rates, corr)

    def relative_errors(self, truth: ModelParams) -> Dict[str, object]:
        """Relative errors ``|estimate - truth| / |truth|`` per parameter."""
        couplings = {
            edge: abs(estimate.aggregate - truth.coupling[edge])
            / abs(truth.coupling[edge])
            for edge, estimate in self.couplings.items()
            if truth.coupling[edge] != 0
        }
        return {
            "theta": np.abs(self.theta - truth.theta) / np.abs(truth.theta),
            "coupling": couplings,
            "rates": np.abs(self.rates - truth.noise_rates) / truth.noise_rates,
        }


def _check_events(counts, i, min_events, low_confidence, diagnostics):
    if counts.base_total[i] < min_events:
        tag = f"theta[{i}]"
        low_confidence.add(tag)
        diagnostics.setdefault(tag, []).append(
            f"{int(counts.base_total[i])} untriggered windows"
        )
    for j in counts.structure.parents(i):
        tag = f"J[{i},{j}]"
        steps = int(counts.structure.corr_times[i, j])
        observed = counts.edge_total[i, j, 1 : steps + 1]
        if observed.max(initial=0) < min_events:
            low_confidence.add(tag)
            diagnostics.setdefault(tag, []).append(
                f"at most {int(observed.max(initial=0))} events per trigger level"
            )


def estimate_all(
    db: LossTrajectory,
    structure: CouplingStructure,
    rates: Optional[Sequence[float]] = None,
    aggregation: Aggregation = Aggregation.MEAN,
    seed: Optional[int] = None,
    min_events: int = MIN_EVENT_COUNT,
) -> EstimationResult:
    """Estimate theta, J and, where derivable, lambda of every process.

    Processes are handled in topological order. With a causal loop in the
    graph the rates must be supplied and only theta and J are estimated.

    Args:
        db: Loss database
        structure: Zero pattern of ``J`` and the look-backs
        rates: Known noise rates; estimated from the data when omitted
        aggregation: How per-level coupling candidates are combined
        seed: Seed of the generator used by ``Aggregation.SAMPLE``
        min_events: Event count below which an estimate is flagged

    Returns:
        The estimation result

    Raises:
        UnsupportedModelError: If the rates are needed but not derivable
    """
    n = structure.n_processes
    graph = structure.graph()
    if rates is None and not graph.acyclic:
        raise UnsupportedModelError(
            "the influence graph has causal loops; noise rates must be supplied"
        )
    if rates is not None:
        rates = np.asarray(rates, dtype=float)
        if rates.shape != (n,) or not np.all(rates > 0):
            raise ParameterError(f"need {n} positive noise rates")
    counts = scan_events(db, structure)
    rng = np.random.default_rng(seed) if aggregation is Aggregation.SAMPLE else None
    unit_couplings = _unit_rate_couplings(counts, aggregation, rng)
    order = graph.topo_order if graph.acyclic else tuple(range(n))

    theta = np.zeros(n)
    fitted_rates = np.zeros(n)
    estimated = np.zeros(n, dtype=bool)
    couplings = {}
    low_confidence, infeasible, diagnostics = set(), set(), {}
    for i in order:
        if rates is None:
            fitted_rates[i] = estimate_lambda(db, counts, i, unit_couplings)
            estimated[i] = True
        else:
            fitted_rates[i] = rates[i]
        rate = fitted_rates[i]
        theta[i] = estimate_theta(counts, i, rate)
        for j in structure.parents(i):
            unit = unit_couplings[(i, j)]
            couplings[(i, j)] = CouplingEstimate(
                (i, j),
                {c: value / rate for c, value in unit.candidates.items()},
                unit.aggregate / rate,
                unit.events,
                unit.skipped,
            )
            if unit.skipped:
                diagnostics.setdefault(f"J[{i},{j}]", []).extend(
                    f"level {c} skipped: {reason}"
                    for c, reason in sorted(unit.skipped.items())
                )
        _check_events(counts, i, min_events, low_confidence, diagnostics)
        reach = sum(
            structure.corr_times[i, j] * couplings[(i, j)].aggregate
            for j in structure.parents(i)
        )
        if reach >= abs(theta[i]):
            infeasible.add(f"l[{i}]")
            diagnostics.setdefault(f"l[{i}]", []).append(
                f"sum of t* J = {reach:.6g} reaches |theta| = {abs(theta[i]):.6g}"
            )
        logger.info(
            "process %d: theta=%.6g lambda=%.6g (%s)",
            i,
            theta[i],
            rate,
            "estimated" if estimated[i] else "supplied",
        )
    for tag in sorted(low_confidence):
        logger.warning("%s rests on fewer than %d events", tag, min_events)
    return EstimationResult(
        structure=structure,
        theta=theta,
        couplings=couplings,
        rates=fitted_rates,
        rates_estimated=estimated,
        counts=counts,
        n_steps=db.n_steps,
        cumulative=db.losses.sum(axis=0),
        low_confidence=low_confidence,
        infeasible=infeasible,
        diagnostics=diagnostics,
    )


def is_feasible(params: ModelParams, i: int) -> bool:
    """Whether ``sum_j t*_ij J_ij < |theta_i|`` with a negative ``theta_i``."""
    reach = float(np.sum(params.corr_times[i] * params.coupling[i]))
    return params.theta[i] < 0 and reach < abs(params.theta[i])
