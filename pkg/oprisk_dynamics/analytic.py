"""Exact moments of the losses for graphs without causal loops.

Every solvable process is reduced to the distribution of its drive
``a_i = theta_i + sum_j J_ij C_ij``: a discrete law over the trigger-count
vectors of its parents. Moments of ``l_i = ramp(a_i + xi_i)`` then follow
from the moments of the noise of ``i`` alone. The closed-form classes build
that law directly; every other acyclic class enumerates the joint indicator
configurations of the ancestors inside the dependency cone.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import binom, norm

from .core import ArrayLike, ExponentialNoise, ModelParams, NoiseModel
from .errors import (
    ClassificationError,
    ParameterError,
    ResourceLimitError,
    UnsupportedModelError,
)
from .graph import SubgraphClass, build_graph, classify_subgraph
from .oprisk_constants import (
    DEFAULT_CONFIDENCE,
    ENUMERATION_CHUNK,
    MAX_ENUMERATION_TERMS,
    SubgraphKind,
)

logger = logging.getLogger(__name__)

ENUMERATION = "enumeration"


class LossMoments(NamedTuple):
    """Stationary mean, variance and loss probability of one process."""

    mean: float
    variance: float
    loss_probability: float


@dataclass(frozen=True, eq=False)
class DriveDistribution:
    """Discrete law of the deterministic part of the equation of motion.

    ``values[k]`` occurs with probability ``weights[k]``; ``noise`` is the
    noise of the process the drive belongs to.
    """

    values: np.ndarray
    weights: np.ndarray
    noise: NoiseModel

    def moment(self, order: int) -> float:
        """Return ``E[l**order]``."""
        terms = self.weights * np.asarray(self.noise.moment(order, self.values))
        return math.fsum(terms)

    @property
    def mean(self) -> float:
        """Mean loss per step."""
        return self.moment(1)

    @property
    def variance(self) -> float:
        """Variance of the loss per step, clamped at zero."""
        return max(self.moment(2) - self.mean**2, 0.0)

    @property
    def loss_probability(self) -> float:
        """Probability of a nonzero loss in one step."""
        probability = self.weights * np.asarray(
            self.noise.loss_probability(self.values)
        )
        return min(max(math.fsum(probability), 0.0), 1.0)

    def survival(self, x: ArrayLike) -> ArrayLike:
        """Return ``Pr[l > x]`` for ``x >= 0``."""
        points = np.asarray(x, dtype=float)
        tails = self.noise.tail_probability(points[..., None] - self.values)
        result = np.asarray(tails) @ self.weights
        return float(result) if np.ndim(result) == 0 else result

    def moments(self) -> LossMoments:
        """Collect mean, variance and loss probability."""
        return LossMoments(self.mean, self.variance, self.loss_probability)


def free_moment(order: int, shift: ArrayLike, rate: float) -> ArrayLike:
    """Return ``m^(n)F(x) = E[ramp(x + xi)**n]`` for exponential noise.

    Args:
        order: 1 or 2
        shift: The deterministic part ``x``
        rate: Rate of the exponential noise

    Returns:
        The moment, non-negative
    """
    return ExponentialNoise(rate).moment(order, shift)


def free_loss_probability(shift: ArrayLike, rate: float) -> ArrayLike:
    """Return ``Pr[x + xi > 0]``: ``exp(rate * x)`` below zero, 1 above."""
    return ExponentialNoise(rate).loss_probability(shift)


def binomial_weights(n: int, p: float) -> np.ndarray:
    """Binomial probabilities of ``0..n`` successes, built in log space."""
    if n < 0 or not 0.0 <= p <= 1.0:
        raise ParameterError(f"need n >= 0 and p in [0, 1], got ({n}, {p})")
    return np.exp(binom.logpmf(np.arange(n + 1), n, p))


def _bit_table(width: int) -> np.ndarray:
    """Every configuration of ``width`` bits, one per row."""
    configs = np.arange(2**width, dtype=np.int64)
    return ((configs[:, None] >> np.arange(width)) & 1).astype(bool)


def _require_analytic(params: ModelParams, nodes: Sequence[int]):
    for node in nodes:
        noise = params.noise_model(node)
        if not noise.supports_analytic:
            raise UnsupportedModelError(
                f"{noise!r} has no analytic moments; use Monte Carlo",
                quantity=f"l[{node}]",
            )


def _free_probability(params: ModelParams, node: int) -> float:
    return float(params.noise_model(node).loss_probability(params.theta[node]))


def _expect_class(
    params: ModelParams, i: int, kinds: Sequence[SubgraphKind]
) -> SubgraphClass:
    found = classify_subgraph(build_graph(params), i)
    if found.kind not in kinds:
        expected = " or ".join(kind.name for kind in kinds)
        raise ClassificationError(
            f"process {i} is {found.kind.name}, expected {expected}"
        )
    return found


def _free_drive(params: ModelParams, i: int) -> DriveDistribution:
    return DriveDistribution(
        np.array([params.theta[i]]), np.ones(1), params.noise_model(i)
    )


def _single_parent_drive(params: ModelParams, i: int, j: int) -> DriveDistribution:
    steps = int(params.corr_times[i, j])
    weights = binomial_weights(steps, _free_probability(params, j))
    values = params.theta[i] + params.coupling[i, j] * np.arange(steps + 1)
    return DriveDistribution(values, weights, params.noise_model(i))


def _multi_parent_drive(
    params: ModelParams, i: int, parents: Sequence[int], cap: int
) -> DriveDistribution:
    terms = math.prod(int(params.corr_times[i, j]) + 1 for j in parents)
    if terms > cap:
        raise ResourceLimitError(
            f"{terms} trigger-count combinations exceed the cap {cap}; "
            "use Monte Carlo",
            quantity=f"l[{i}]",
        )
    values = np.array([params.theta[i]])
    weights = np.ones(1)
    for j in parents:
        steps = int(params.corr_times[i, j])
        shifts = params.coupling[i, j] * np.arange(steps + 1)
        level = binomial_weights(steps, _free_probability(params, j))
        values = (values[:, None] + shifts[None, :]).ravel()
        weights = (weights[:, None] * level[None, :]).ravel()
    return DriveDistribution(values, weights, params.noise_model(i))


def _chain_drive(
    params: ModelParams, path: Sequence[int], cap: int
) -> DriveDistribution:
    """Nested sum for the path ``k -> j -> i`` with a free root ``k``.

    ``i`` sees ``j`` at offsets ``1..t_ij`` before the current step; the
    indicator of ``j`` at offset ``s`` depends on the indicators of ``k`` at
    offsets ``s+1..s+t_jk``, so the root spans offsets ``2..t_ij+t_jk``.
    """
    k, j, i = path
    t_ij = int(params.corr_times[i, j])
    t_jk = int(params.corr_times[j, k])
    span = t_ij + t_jk - 1
    terms = 2**span * 2**t_ij
    if terms > cap:
        raise ResourceLimitError(
            f"{terms} indicator configurations exceed the cap {cap}; "
            "use Monte Carlo",
            quantity=f"l[{i}]",
        )
    p_root = _free_probability(params, k)
    roots = _bit_table(span)
    root_weight = np.prod(np.where(roots, p_root, 1.0 - p_root), axis=1)
    windows = np.stack(
        [roots[:, s - 1 : s - 1 + t_jk].sum(axis=1) for s in range(1, t_ij + 1)],
        axis=1,
    )
    middle = np.asarray(
        params.noise_model(j).loss_probability(
            params.theta[j] + params.coupling[j, k] * windows
        )
    )
    mids = _bit_table(t_ij)
    conditional = np.prod(
        np.where(mids[None, :, :], middle[:, None, :], 1.0 - middle[:, None, :]),
        axis=2,
    )
    joint = root_weight[:, None] * conditional
    counts = mids.sum(axis=1)
    weights = np.array(
        [math.fsum(joint[:, counts == c].ravel()) for c in range(t_ij + 1)]
    )
    values = params.theta[i] + params.coupling[i, j] * np.arange(t_ij + 1)
    return DriveDistribution(values, weights, params.noise_model(i))


def dependency_cone(params: ModelParams, i: int) -> List[Tuple[int, int]]:
    """Indicator variables ``(node, offset)`` that feed the drive of ``i``.

    Offsets count steps before the current one. Variables are ordered by
    decreasing offset, so every variable comes after the variables it
    depends on.
    """
    variables = set()
    frontier = [
        (j, s)
        for j in params.parents(i)
        for s in range(1, int(params.corr_times[i, j]) + 1)
    ]
    while frontier:
        variable = frontier.pop()
        if variable in variables:
            continue
        variables.add(variable)
        node, offset = variable
        for k in params.parents(node):
            steps = int(params.corr_times[node, k])
            frontier.extend((k, offset + r) for r in range(1, steps + 1))
    return sorted(variables, key=lambda v: (-v[1], v[0]))


def _enumerated_drive(
    params: ModelParams, i: int, cap: int, chunk: int
) -> DriveDistribution:
    cone = dependency_cone(params, i)
    size = len(cone)
    total = 2**size
    if total > cap:
        raise ResourceLimitError(
            f"{total} indicator configurations of {size} ancestor events "
            f"exceed the cap {cap}; use Monte Carlo",
            quantity=f"l[{i}]",
        )
    index = {variable: n for n, variable in enumerate(cone)}
    plan = []
    for node, offset in cone:
        feeds = []
        for k in params.parents(node):
            steps = int(params.corr_times[node, k])
            columns = [index[(k, offset + r)] for r in range(1, steps + 1)]
            feeds.append((params.coupling[node, k], columns))
        plan.append((params.noise_model(node), params.theta[node], feeds))

    parents = params.parents(i)
    radices = [int(params.corr_times[i, j]) + 1 for j in parents]
    strides = np.cumprod([1] + radices[:-1]).astype(np.int64)
    n_keys = math.prod(radices)
    key_columns = [
        [index[(j, s)] for s in range(1, radix)] for j, radix in zip(parents, radices)
    ]

    logger.debug("enumerating %d configurations for process %d", total, i)
    partial = []
    for start in range(0, total, chunk):
        configs = np.arange(start, min(start + chunk, total), dtype=np.int64)
        bits = ((configs[:, None] >> np.arange(size)) & 1).astype(bool)
        weight = np.ones(configs.size)
        for column, (noise, theta, feeds) in enumerate(plan):
            drive = np.full(configs.size, theta)
            for coupling, columns in feeds:
                drive = drive + coupling * bits[:, columns].sum(axis=1)
            q = np.asarray(noise.loss_probability(drive))
            weight *= np.where(bits[:, column], q, 1.0 - q)
        key = np.zeros(configs.size, dtype=np.int64)
        for stride, columns in zip(strides, key_columns):
            key += stride * bits[:, columns].sum(axis=1)
        partial.append(np.bincount(key, weights=weight, minlength=n_keys))

    stacked = np.stack(partial, axis=1)
    weights = np.array([math.fsum(row) for row in stacked])
    keys = np.arange(n_keys)
    values = np.full(n_keys, params.theta[i])
    for j, stride, radix in zip(parents, strides, radices):
        values = values + params.coupling[i, j] * ((keys // stride) % radix)
    return DriveDistribution(values, weights, params.noise_model(i))


def drive_distribution(
    params: ModelParams,
    i: int,
    cap: int = MAX_ENUMERATION_TERMS,
    enumerate_all: bool = False,
) -> Tuple[DriveDistribution, str]:
    """Build the drive law of process ``i`` with the cheapest exact method.

    Args:
        params: Model parameters
        i: Process index
        cap: Largest number of weighted terms an enumeration may use
        enumerate_all: Skip the closed forms and enumerate the cone

    Returns:
        The drive distribution and the name of the method used

    Raises:
        UnsupportedModelError: If the ancestors of ``i`` form a causal loop,
            or a noise in the cone has no analytic moments
        ResourceLimitError: If the enumeration would exceed ``cap``
    """
    found = classify_subgraph(build_graph(params), i)
    if found.kind is SubgraphKind.HAS_CAUSAL_LOOP:
        raise UnsupportedModelError(
            "ancestors form a causal loop; no exact solution, use Monte Carlo",
            quantity=f"l[{i}]",
        )
    _require_analytic(params, [i] + [node for node, _ in dependency_cone(params, i)])
    if enumerate_all or found.kind is SubgraphKind.GENERAL_ACYCLIC:
        return _enumerated_drive(params, i, cap, ENUMERATION_CHUNK), ENUMERATION
    if found.kind is SubgraphKind.FREE:
        drive = _free_drive(params, i)
    elif found.kind is SubgraphKind.SINGLE_FREE_PARENT:
        drive = _single_parent_drive(params, i, found.nodes[0])
    elif found.kind is SubgraphKind.MULTIPLE_FREE_PARENTS:
        drive = _multi_parent_drive(params, i, found.nodes, cap)
    elif len(found.nodes) == 3:
        drive = _chain_drive(params, found.nodes, cap)
    else:
        return _enumerated_drive(params, i, cap, ENUMERATION_CHUNK), ENUMERATION
    return drive, found.kind.name.lower()


def moments_free(params: ModelParams, i: int) -> LossMoments:
    """Moments of a process influenced by no process.

    Raises:
        ClassificationError: If ``i`` has parents
    """
    _expect_class(params, i, [SubgraphKind.FREE])
    _require_analytic(params, [i])
    return _free_drive(params, i).moments()


def moments_single_parent(params: ModelParams, i: int, j: int) -> LossMoments:
    """Moments of ``i`` when its only parent ``j`` is free.

    The trigger count ``C_ij`` is binomial with ``t*_ij`` trials and the
    loss probability of ``j``; the moments are the binomial mixture of the
    free moments of ``i`` shifted by ``c * J_ij``. A zero ``J_ij`` reduces
    to the moments of a free process.
    """
    if params.coupling[i, j] == 0:
        return moments_free(params, i)
    found = _expect_class(params, i, [SubgraphKind.SINGLE_FREE_PARENT])
    if found.nodes != (j,):
        raise ClassificationError(f"the parent of {i} is {found.nodes[0]}, not {j}")
    _require_analytic(params, [i, j])
    return _single_parent_drive(params, i, j).moments()


def moments_chain(
    params: ModelParams, path: Sequence[int], cap: int = MAX_ENUMERATION_TERMS
) -> LossMoments:
    """Moments of the last node of a chain with a free root.

    Args:
        params: Model parameters
        path: The chain from the free root down to the process, e.g.
            ``(k, j, i)`` for ``k -> j -> i``
        cap: Largest number of weighted terms

    Returns:
        Mean, variance and loss probability of the last node

    A zero coupling along the path cuts the chain; the part below the last
    cut is solved by the matching shorter class.
    """
    path = tuple(int(node) for node in path)
    if len(path) < 3:
        raise ClassificationError(f"a chain needs at least 3 nodes, got {path}")
    cuts = [
        n for n in range(1, len(path)) if params.coupling[path[n], path[n - 1]] == 0
    ]
    if cuts:
        path = path[cuts[-1] :]
        if len(path) == 1:
            return moments_free(params, path[0])
        if len(path) == 2:
            return moments_single_parent(params, path[1], path[0])
    found = _expect_class(params, path[-1], [SubgraphKind.CHAIN_OF_FREE_ROOT])
    if found.nodes != path:
        raise ClassificationError(f"the chain into {path[-1]} is {found.nodes}")
    _require_analytic(params, path)
    if len(path) == 3:
        return _chain_drive(params, path, cap).moments()
    return _enumerated_drive(params, path[-1], cap, ENUMERATION_CHUNK).moments()


def moments_multi_parent(
    params: ModelParams,
    i: int,
    parents: Sequence[int],
    cap: int = MAX_ENUMERATION_TERMS,
) -> LossMoments:
    """Moments of ``i`` when all its parents are free.

    The trigger counts of different parents are independent binomials, so
    the mixture runs over their product. Parents with a zero coupling are
    dropped.
    """
    parents = [j for j in parents if params.coupling[i, j] != 0]
    if not parents:
        return moments_free(params, i)
    found = _expect_class(
        params,
        i,
        [SubgraphKind.SINGLE_FREE_PARENT, SubgraphKind.MULTIPLE_FREE_PARENTS],
    )
    if tuple(sorted(parents)) != found.nodes:
        raise ClassificationError(f"the parents of {i} are {found.nodes}")
    _require_analytic(params, [i, *found.nodes])
    return _multi_parent_drive(params, i, found.nodes, cap).moments()


def moments_general_acyclic(
    params: ModelParams,
    i: int,
    cap: int = MAX_ENUMERATION_TERMS,
    chunk: int = ENUMERATION_CHUNK,
) -> LossMoments:
    """Moments of any process whose ancestors contain no causal loop.

    Enumerates the joint indicator configurations of every ancestor loss
    event in the dependency cone, weighting each one root first.

    Raises:
        ClassificationError: If the ancestors form a causal loop
        ResourceLimitError: If the cone has more than ``cap`` configurations
    """
    found = classify_subgraph(build_graph(params), i)
    if found.kind is SubgraphKind.HAS_CAUSAL_LOOP:
        raise ClassificationError(f"process {i} has a causal loop among its ancestors")
    cone = dependency_cone(params, i)
    _require_analytic(params, [i] + [node for node, _ in cone])
    return _enumerated_drive(params, i, cap, chunk).moments()


def solve_moments(
    params: ModelParams, i: int, cap: int = MAX_ENUMERATION_TERMS
) -> Tuple[LossMoments, str]:
    """Moments of ``i`` by the fastest exact route, with the route name."""
    drive, method = drive_distribution(params, i, cap)
    return drive.moments(), method


def cumulative_moments(
    mean_l: float, var_l: float, t: ArrayLike
) -> Tuple[ArrayLike, ArrayLike]:
    """Mean and variance of ``z_i(t)`` from the per-step moments.

    Args:
        mean_l: Mean loss per step
        var_l: Variance of the loss per step
        t: Horizon, a step count or an array of them

    Returns:
        ``(t * mean_l, t * var_l)``
    """
    steps = np.asarray(t)
    if np.any(steps < 0):
        raise ParameterError(f"horizon must be non-negative, got {t}")
    if steps.ndim == 0:
        return float(steps) * mean_l, float(steps) * var_l
    return steps * mean_l, steps * var_l


@dataclass(frozen=True)
class VarEstimate:
    """Gaussian Value-at-Risk of a cumulative loss."""

    value: float
    confidence: float
    process: Optional[int] = None
    horizon: Optional[int] = None
    method: str = "gaussian-quantile"


def gaussian_var(
    mean_z: float,
    var_z: float,
    confidence: float = DEFAULT_CONFIDENCE,
    process: Optional[int] = None,
    horizon: Optional[int] = None,
) -> VarEstimate:
    """Return ``mean_z + Phi^-1(confidence) * sqrt(var_z)``.

    Args:
        mean_z: Mean of the cumulative loss
        var_z: Variance of the cumulative loss
        confidence: Level in (0, 1)
        process: Process index, carried into the result
        horizon: Horizon, carried into the result

    Returns:
        The VaR estimate

    Raises:
        ParameterError: If the confidence is outside (0, 1) or ``var_z < 0``
    """
    if not 0.0 < confidence < 1.0:
        raise ParameterError(f"confidence must lie in (0, 1), got {confidence}")
    if var_z < 0:
        raise ParameterError(f"variance must be non-negative, got {var_z}")
    value = mean_z + float(norm.ppf(confidence)) * math.sqrt(var_z)
    return VarEstimate(value, confidence, process, horizon)


@dataclass(frozen=True)
class ProcessMoments:
    """Moments of one process and of its cumulative loss."""

    process: int
    mean_l: float
    var_l: float
    loss_probability: float
    computed_via: str

    def mean_z(self, t: ArrayLike) -> ArrayLike:
        """Mean of the cumulative loss at ``t``."""
        return cumulative_moments(self.mean_l, self.var_l, t)[0]

    def var_z(self, t: ArrayLike) -> ArrayLike:
        """Variance of the cumulative loss at ``t``."""
        return cumulative_moments(self.mean_l, self.var_l, t)[1]

    def var(self, t: int, confidence: float = DEFAULT_CONFIDENCE) -> VarEstimate:
        """Gaussian VaR of the cumulative loss at ``t``."""
        return gaussian_var(
            self.mean_z(t), self.var_z(t), confidence, self.process, t
        )


@dataclass(frozen=True)
class MomentReport:
    """Analytic moments of every solvable process.

    Processes without an exact solution are listed in ``unsolved`` with the
    reason.
    """

    horizon: int
    processes: Tuple[ProcessMoments, ...]
    unsolved: Dict[int, str] = field(default_factory=dict)

    def for_process(self, i: int) -> ProcessMoments:
        """Moments of process ``i``."""
        for moments in self.processes:
            if moments.process == i:
                return moments
        raise KeyError(i)


def moment_report(
    params: ModelParams,
    horizon: int,
    processes: Optional[Sequence[int]] = None,
    cap: int = MAX_ENUMERATION_TERMS,
) -> MomentReport:
    """Solve every requested process, collecting failures instead of raising.

    Args:
        params: Model parameters
        horizon: Horizon of the cumulative moments
        processes: Subset of processes, all by default
        cap: Enumeration cap

    Returns:
        The report
    """
    if horizon < 1:
        raise ParameterError(f"horizon must be positive, got {horizon}")
    wanted = range(params.n_processes) if processes is None else processes
    solved = []
    unsolved = {}
    for i in wanted:
        try:
            moments, method = solve_moments(params, i, cap)
        except (UnsupportedModelError, ResourceLimitError) as error:
            logger.warning("process %d has no exact moments: %s", i, error)
            unsolved[i] = str(error)
            continue
        solved.append(
            ProcessMoments(
                i, moments.mean, moments.variance, moments.loss_probability, method
            )
        )
    return MomentReport(horizon, tuple(solved), unsolved)
