"""Influence graph of the coupling matrix and classification of subgraphs."""

from dataclasses import dataclass
from typing import List, Optional, Tuple

import networkx as nx
import numpy as np

from .core import ModelParams
from .errors import ParameterError
from .oprisk_constants import SubgraphKind


@dataclass(frozen=True)
class CouplingGraph:
    """Directed graph with an edge ``j -> i`` for every ``J_ij != 0``."""

    n_nodes: int
    edges: Tuple[Tuple[int, int], ...]
    acyclic: bool
    topo_order: Optional[Tuple[int, ...]]

    def to_networkx(self) -> nx.DiGraph:
        """Return the graph as a networkx ``DiGraph``."""
        digraph = nx.DiGraph()
        digraph.add_nodes_from(range(self.n_nodes))
        digraph.add_edges_from(self.edges)
        return digraph

    def parents(self, i: int) -> List[int]:
        """Direct influencers of ``i``, in increasing order."""
        return sorted(j for j, k in self.edges if k == i)

    def is_free(self, i: int) -> bool:
        """Whether ``i`` has no incoming edge."""
        return not self.parents(i)


@dataclass(frozen=True)
class SubgraphClass:
    """Shape of the ancestor subgraph of a process.

    ``nodes`` holds the parent for SINGLE_FREE_PARENT, the path from the free
    root down to the process for CHAIN_OF_FREE_ROOT and the parents for
    MULTIPLE_FREE_PARENTS.
    """

    kind: SubgraphKind
    nodes: Tuple[int, ...] = ()

    @property
    def exactly_solvable(self) -> bool:
        """Whether the analytic solver accepts this class."""
        return self.kind is not SubgraphKind.HAS_CAUSAL_LOOP


def graph_from_pattern(pattern: np.ndarray) -> CouplingGraph:
    """Build the influence graph from a boolean zero pattern of ``J``."""
    pattern = np.asarray(pattern, dtype=bool)
    n = pattern.shape[0]
    rows, cols = np.nonzero(pattern)
    edges = tuple(sorted((int(j), int(i)) for i, j in zip(rows, cols)))
    digraph = nx.DiGraph()
    digraph.add_nodes_from(range(n))
    digraph.add_edges_from(edges)
    acyclic = nx.is_directed_acyclic_graph(digraph)
    topo_order = None
    if acyclic:
        topo_order = tuple(nx.lexicographical_topological_sort(digraph))
    return CouplingGraph(n, edges, acyclic, topo_order)


def build_graph(params: ModelParams) -> CouplingGraph:
    """Build the influence graph of a parameter set.

    Args:
        params: Model parameters; only the zero pattern of ``J`` is used

    Returns:
        The graph with its acyclicity certificate
    """
    return graph_from_pattern(params.coupling != 0)


def ancestor_subgraph(graph: CouplingGraph, i: int) -> nx.DiGraph:
    """Subgraph induced by ``i`` and every node influencing it."""
    digraph = graph.to_networkx()
    nodes = nx.ancestors(digraph, i) | {i}
    return digraph.subgraph(nodes).copy()


def classify_subgraph(graph: CouplingGraph, i: int) -> SubgraphClass:
    """Classify the ancestor subgraph of process ``i``.

    Args:
        graph: The influence graph
        i: Process index

    Returns:
        The subgraph class

    Raises:
        ParameterError: If ``i`` is not a node of the graph
    """
    if not 0 <= i < graph.n_nodes:
        raise ParameterError(f"process {i} outside 0..{graph.n_nodes - 1}")
    sub = ancestor_subgraph(graph, i)
    if not nx.is_directed_acyclic_graph(sub):
        return SubgraphClass(SubgraphKind.HAS_CAUSAL_LOOP)
    parents = sorted(sub.predecessors(i))
    if not parents:
        return SubgraphClass(SubgraphKind.FREE)
    parents_free = all(sub.in_degree(j) == 0 for j in parents)
    if len(parents) == 1 and parents_free:
        return SubgraphClass(SubgraphKind.SINGLE_FREE_PARENT, (parents[0],))
    if all(degree <= 1 for _, degree in sub.in_degree()):
        path = [i]
        while sub.in_degree(path[-1]):
            path.append(next(iter(sub.predecessors(path[-1]))))
        return SubgraphClass(SubgraphKind.CHAIN_OF_FREE_ROOT, tuple(reversed(path)))
    if parents_free:
        return SubgraphClass(SubgraphKind.MULTIPLE_FREE_PARENTS, tuple(parents))
    return SubgraphClass(SubgraphKind.GENERAL_ACYCLIC)


def causal_loops(graph: CouplingGraph) -> List[List[int]]:
    """Return the elementary cycles of the graph, self-loops included."""
    return [list(cycle) for cycle in nx.simple_cycles(graph.to_networkx())]


def to_adjacency_text(graph: CouplingGraph) -> str:
    """Render the edges one per line as ``j -> i``."""
    return "".join(f"{j} -> {i}\n" for j, i in graph.edges)


@dataclass(frozen=True, eq=False)
class CouplingStructure:
    """Prior knowledge for estimation: which ``J_ij`` are nonzero, and ``t*``."""

    pattern: np.ndarray
    corr_times: np.ndarray

    def __post_init__(self):
        """Validate the pattern against the look-backs."""
        pattern = np.array(self.pattern, dtype=bool)
        corr = np.array(self.corr_times, dtype=np.int64)
        if pattern.ndim != 2 or pattern.shape[0] != pattern.shape[1]:
            raise ParameterError(f"pattern must be square, got {pattern.shape}")
        if corr.shape != pattern.shape:
            raise ParameterError("pattern and corr_times differ in shape")
        if np.any(corr[pattern] < 1):
            raise ParameterError("every declared edge needs a look-back >= 1")
        corr[~pattern] = 0
        pattern.setflags(write=False)
        corr.setflags(write=False)
        object.__setattr__(self, "pattern", pattern)
        object.__setattr__(self, "corr_times", corr)

    @classmethod
    def from_params(cls, params: ModelParams) -> "CouplingStructure":
        """Take the zero pattern and look-backs of known parameters."""
        return cls(params.coupling != 0, params.corr_times)

    @property
    def n_processes(self) -> int:
        """Number of processes N."""
        return int(self.pattern.shape[0])

    @property
    def max_corr_time(self) -> int:
        """Largest look-back."""
        return int(self.corr_times.max(initial=0))

    def parents(self, i: int) -> List[int]:
        """Declared influencers of ``i``."""
        return [int(j) for j in np.flatnonzero(self.pattern[i])]

    def look_back(self, i: int) -> int:
        """Largest look-back of the couplings into ``i`` (0 for free processes)."""
        return int(self.corr_times[i].max(initial=0))

    def graph(self) -> CouplingGraph:
        """Influence graph of the declared pattern."""
        return graph_from_pattern(self.pattern)
