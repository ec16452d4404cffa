"""Communication graphs, gossip matrices and their spectral profile."""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import FrozenSet, List, Optional, Tuple

import networkx as nx
import numpy as np
from scipy import linalg

from .errors import DegenerateSpectrumError, TopologyError

logger = logging.getLogger(__name__)

GOSSIP_TOLERANCE = 1e-12
EIGEN_TOLERANCE = 1e-10
MAX_CONNECT_RETRIES = 1000

Edge = Tuple[int, int]


@dataclass(frozen=True)
class CommGraph:
    """Undirected connected graph over agents 0..N-1."""

    n_agents: int
    edges: FrozenSet[Edge]

    def __post_init__(self):
        if self.n_agents < 1:
            raise TopologyError(f"need at least one agent, got {self.n_agents}")
        normalized = set()
        for i, j in self.edges:
            if i == j:
                raise TopologyError(f"self-loop on vertex {i}")
            if not (0 <= i < self.n_agents and 0 <= j < self.n_agents):
                raise TopologyError(f"edge ({i}, {j}) outside [0, {self.n_agents})")
            normalized.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(normalized))
        if not nx.is_connected(self.to_networkx()):
            raise TopologyError("communication graph is not connected", code="UNCONNECTABLE")

    @classmethod
    def from_networkx(cls, graph: nx.Graph) -> "CommGraph":
        graph = nx.convert_node_labels_to_integers(graph, ordering="sorted")
        return cls(graph.number_of_nodes(), frozenset((int(i), int(j)) for i, j in graph.edges()))

    def to_networkx(self) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from(range(self.n_agents))
        graph.add_edges_from(self.edges)
        return graph

    @property
    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n_agents, dtype=int)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def neighbors(self, i: int) -> List[int]:
        return sorted({b if a == i else a for a, b in self.edges if i in (a, b)})

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n_agents, self.n_agents))
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1.0
        return a


def _attempt_seed(seed: int, attempt: int) -> int:
    return int(np.random.SeedSequence([seed, attempt]).generate_state(1)[0])


def _connected_random(make, seed: int, retries: int) -> nx.Graph:
    for attempt in range(retries):
        graph = make(_attempt_seed(seed, attempt))
        if graph.number_of_nodes() > 0 and nx.is_connected(graph):
            if attempt:
                logger.debug(f"Random graph connected after {attempt + 1} attempts")
            return graph
    raise TopologyError(
        f"no connected graph within {retries} attempts", code="UNCONNECTABLE"
    )


def build_topology(
    kind: str,
    n_agents: int,
    seed: int = 0,
    rows: Optional[int] = None,
    cols: Optional[int] = None,
    degree: Optional[int] = None,
    p: Optional[float] = None,
    retries: int = MAX_CONNECT_RETRIES,
) -> CommGraph:
    """Build one of the supported graph families."""
    if n_agents < 2:
        raise TopologyError(f"need N >= 2 agents, got {n_agents}")

    if kind == "complete":
        graph = nx.complete_graph(n_agents)
    elif kind == "ring":
        graph = nx.cycle_graph(n_agents)
    elif kind == "path":
        graph = nx.path_graph(n_agents)
    elif kind == "star":
        graph = nx.star_graph(n_agents - 1)
    elif kind == "grid":
        if rows is None or cols is None or rows * cols != n_agents:
            raise TopologyError(f"grid {rows}x{cols} does not hold {n_agents} agents")
        graph = nx.grid_2d_graph(rows, cols)
    elif kind == "random_regular":
        if degree is None or not 1 <= degree < n_agents or (degree * n_agents) % 2:
            raise TopologyError(f"no {degree}-regular graph on {n_agents} vertices")
        graph = _connected_random(
            lambda s: nx.random_regular_graph(degree, n_agents, seed=s), seed, retries
        )
    elif kind == "erdos_renyi":
        if p is None or not 0.0 < p <= 1.0:
            raise TopologyError(f"edge probability must lie in (0, 1], got {p}")
        graph = _connected_random(
            lambda s: nx.erdos_renyi_graph(n_agents, p, seed=s), seed, retries
        )
    else:
        raise TopologyError(f"unknown topology kind '{kind}'")

    g = CommGraph.from_networkx(graph)
    logger.info(f"Built {kind} topology: N={g.n_agents}, |E|={len(g.edges)}")
    return g


def read_edge_list(path: str | Path) -> CommGraph:
    """Read `N` then 1-based `i j` lines."""
    lines = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise TopologyError(f"empty edge list {path}")
    try:
        (n,) = (int(x) for x in lines[0])
        edges = frozenset((int(a) - 1, int(b) - 1) for a, b in lines[1:])
    except ValueError as e:
        raise TopologyError(f"malformed edge list {path}: {e}", code="BAD_PARAMS") from e
    return CommGraph(n, edges)


def write_edge_list(g: CommGraph, path: str | Path) -> None:
    rows = [str(g.n_agents)] + [f"{i + 1} {j + 1}" for i, j in sorted(g.edges)]
    Path(path).write_text("\n".join(rows) + "\n")


@dataclass(frozen=True)
class GossipMatrix:
    """Symmetric doubly stochastic weights supported on a graph."""

    weights: np.ndarray = field(repr=False)
    source_graph: CommGraph

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        check_gossip_matrix(w, self.source_graph)

    @property
    def n_agents(self) -> int:
        return self.weights.shape[0]

    def to_csv(self, path: str | Path) -> None:
        np.savetxt(path, self.weights, delimiter=",", fmt="%.17g")


def check_gossip_matrix(w: np.ndarray, g: CommGraph, tol: float = GOSSIP_TOLERANCE) -> None:
    n = g.n_agents
    if w.shape != (n, n):
        raise TopologyError(f"gossip matrix shape {w.shape} does not match N={n}")
    if np.max(np.abs(w - w.T)) > tol:
        raise TopologyError("gossip matrix is not symmetric")
    if np.min(w) < 0.0:
        raise TopologyError("gossip matrix has negative entries")
    if np.max(np.abs(w.sum(axis=1) - 1.0)) > tol:
        raise TopologyError("gossip matrix rows do not sum to one")
    allowed = g.adjacency() + np.eye(n)
    if np.any((w > 0.0) & (allowed == 0.0)):
        raise TopologyError("gossip matrix has weight outside the graph support")


def _fill_diagonal(w: np.ndarray) -> np.ndarray:
    np.fill_diagonal(w, 0.0)
    np.fill_diagonal(w, 1.0 - w.sum(axis=1))
    return w


def metropolis_weights(g: CommGraph) -> GossipMatrix:
    """W(i,j) = 1/(1 + max(deg i, deg j)) on edges, remainder on the diagonal."""
    deg = g.degrees
    w = np.zeros((g.n_agents, g.n_agents))
    for i, j in g.edges:
        w[i, j] = w[j, i] = 1.0 / (1.0 + max(deg[i], deg[j]))
    return GossipMatrix(_fill_diagonal(w), g)


def lazy_metropolis_weights(g: CommGraph) -> GossipMatrix:
    """W(i,j) = 1/(2 max(deg i, deg j)) on edges; at least half the mass stays home."""
    deg = g.degrees
    w = np.zeros((g.n_agents, g.n_agents))
    for i, j in g.edges:
        w[i, j] = w[j, i] = 1.0 / (2.0 * max(deg[i], deg[j]))
    return GossipMatrix(_fill_diagonal(w), g)


WEIGHT_BUILDERS = {
    "metropolis": metropolis_weights,
    "lazy_metropolis": lazy_metropolis_weights,
}


@dataclass(frozen=True)
class SpectralProfile:
    sigma2: float
    rho: float
    solver_tolerance: float = EIGEN_TOLERANCE


def spectral_gap(w: GossipMatrix) -> SpectralProfile:
    """Second-largest singular value of W via a dense symmetric eigensolver."""
    eigenvalues = linalg.eigvalsh(w.weights)
    magnitudes = np.sort(np.abs(eigenvalues))[::-1]
    sigma2 = float(magnitudes[1]) if magnitudes.size > 1 else 0.0
    if sigma2 >= 1.0 - GOSSIP_TOLERANCE:
        raise DegenerateSpectrumError(f"sigma2={sigma2} leaves no spectral gap")
    return SpectralProfile(sigma2=sigma2, rho=1.0 - sigma2)
