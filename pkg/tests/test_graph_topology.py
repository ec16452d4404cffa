"""Tests for communication graphs, gossip matrices and spectral profiles."""

import networkx as nx
import numpy as np
import pytest

from src.errors import DegenerateSpectrumError, TopologyError
from src.graph_topology import (
    CommGraph,
    GossipMatrix,
    build_topology,
    lazy_metropolis_weights,
    metropolis_weights,
    read_edge_list,
    spectral_gap,
    write_edge_list,
)


@pytest.fixture
def path3():
    """Path on three vertices."""
    return build_topology("path", 3)


# Test build_topology
def test_complete_graph_has_every_pair():
    """Test the complete graph on four agents."""
    g = build_topology("complete", 4)
    assert len(g.edges) == 6
    assert all(len(g.neighbors(i)) == 3 for i in range(4))


def test_ring_degrees():
    """Test that every ring vertex has two neighbours."""
    g = build_topology("ring", 5)
    assert len(g.edges) == 5
    assert g.degrees.tolist() == [2] * 5


def test_grid_and_star_shapes():
    """Test edge counts of the grid and the star."""
    grid = build_topology("grid", 12, rows=3, cols=4)
    assert len(grid.edges) == 3 * 3 + 2 * 4
    star = build_topology("star", 6)
    assert sorted(star.degrees.tolist()) == [1, 1, 1, 1, 1, 5]


def test_erdos_renyi_is_connected_and_reproducible():
    """Test that a seeded random graph is connected and repeatable."""
    g1 = build_topology("erdos_renyi", 20, seed=7, p=0.3)
    g2 = build_topology("erdos_renyi", 20, seed=7, p=0.3)
    assert g1.edges == g2.edges
    assert nx.is_connected(g1.to_networkx())


def test_erdos_renyi_gives_up_after_retry_budget():
    """Test the UNCONNECTABLE code after the retry budget."""
    with pytest.raises(TopologyError) as exc:
        build_topology("erdos_renyi", 20, seed=1, p=0.001, retries=3)
    assert exc.value.code == "UNCONNECTABLE"


def test_random_regular_parity_is_rejected():
    """Test that an odd degree sum is refused."""
    with pytest.raises(TopologyError) as exc:
        build_topology("random_regular", 5, degree=3)
    assert exc.value.code == "BAD_PARAMS"


def test_grid_dimensions_must_match():
    """Test that rows x cols must equal N."""
    with pytest.raises(TopologyError) as exc:
        build_topology("grid", 10, rows=3, cols=3)
    assert exc.value.code == "BAD_PARAMS"


# Test CommGraph
def test_disconnected_graph_is_rejected():
    """Test that two components are refused."""
    with pytest.raises(TopologyError) as exc:
        CommGraph(4, frozenset({(0, 1), (2, 3)}))
    assert exc.value.code == "UNCONNECTABLE"


def test_isolated_vertex_is_rejected():
    """Test that a vertex without edges makes the graph disconnected."""
    with pytest.raises(TopologyError) as exc:
        CommGraph(3, frozenset({(0, 1)}))
    assert exc.value.code == "UNCONNECTABLE"


def test_single_agent_is_connected():
    """Test the trivial one-vertex graph."""
    assert CommGraph(1, frozenset()).degrees.tolist() == [0]


def test_self_loop_is_rejected():
    """Test that self-loops are refused."""
    with pytest.raises(TopologyError):
        CommGraph(2, frozenset({(0, 0), (0, 1)}))


def test_duplicate_edges_collapse():
    """Test that (i, j) and (j, i) are one edge."""
    g = CommGraph(3, frozenset({(0, 1), (1, 0), (1, 2)}))
    assert len(g.edges) == 2


# Test gossip matrices
def test_metropolis_path3(path3):
    """Test Metropolis weights and sigma2 on the 3-path."""
    w = metropolis_weights(path3)
    expected = np.array([[2 / 3, 1 / 3, 0], [1 / 3, 1 / 3, 1 / 3], [0, 1 / 3, 2 / 3]])
    np.testing.assert_allclose(w.weights, expected, atol=1e-12)
    assert spectral_gap(w).sigma2 == pytest.approx(2 / 3, abs=1e-10)


def test_metropolis_complete_is_uniform():
    """Test that the complete graph averages in one step."""
    w = metropolis_weights(build_topology("complete", 4))
    np.testing.assert_allclose(w.weights, np.full((4, 4), 0.25), atol=1e-12)
    profile = spectral_gap(w)
    assert profile.sigma2 == pytest.approx(0.0, abs=1e-10)
    assert profile.rho == pytest.approx(1.0, abs=1e-10)


def test_metropolis_ring4_spectrum():
    """Test weights and sigma2 on the 4-ring."""
    w = metropolis_weights(build_topology("ring", 4))
    off = w.weights[~np.eye(4, dtype=bool)]
    assert set(np.round(off[off > 0], 12)) == {round(1 / 3, 12)}
    assert spectral_gap(w).sigma2 == pytest.approx(1 / 3, abs=1e-10)


def test_spectral_gap_invariant_under_relabeling():
    """Test that permuting agents leaves sigma2 unchanged."""
    w = metropolis_weights(build_topology("random_regular", 10, seed=3, degree=3))
    perm = np.random.default_rng(0).permutation(10)
    relabeled = w.weights[np.ix_(perm, perm)]
    edges = frozenset((int(np.where(perm == i)[0][0]), int(np.where(perm == j)[0][0])) for i, j in w.source_graph.edges)
    w_perm = GossipMatrix(relabeled, CommGraph(10, edges))
    assert spectral_gap(w_perm).sigma2 == pytest.approx(spectral_gap(w).sigma2, abs=1e-10)


def test_lazy_metropolis_keeps_half_the_mass():
    """Test the lazy variant's diagonal."""
    g = build_topology("grid", 16, rows=4, cols=4)
    w = lazy_metropolis_weights(g)
    assert np.all(np.diag(w.weights) >= 0.5 - 1e-12)
    assert 0.0 <= spectral_gap(w).sigma2 < 1.0


def test_gossip_matrix_support_is_checked(path3):
    """Test that weights off the graph's edges are refused."""
    with pytest.raises(TopologyError):
        GossipMatrix(np.full((3, 3), 1 / 3), path3)


def test_gossip_matrix_rows_must_sum_to_one(path3):
    """Test the stochasticity check."""
    with pytest.raises(TopologyError):
        GossipMatrix(np.eye(3) * 0.5, path3)


def test_identity_weights_have_no_gap(path3):
    """Test that W = I has a degenerate spectrum."""
    with pytest.raises(DegenerateSpectrumError):
        spectral_gap(GossipMatrix(np.eye(3), path3))


def test_gossip_matrix_csv_export(tmp_path, path3):
    """Test CSV export of W."""
    w = metropolis_weights(path3)
    w.to_csv(tmp_path / "w.csv")
    np.testing.assert_allclose(np.loadtxt(tmp_path / "w.csv", delimiter=","), w.weights)


# Test edge lists
def test_edge_list_round_trip(tmp_path):
    """Test the header and 1-based edge lines."""
    g = build_topology("ring", 6)
    path = tmp_path / "ring.txt"
    write_edge_list(g, path)
    assert path.read_text().splitlines()[0] == "6"
    assert "1 2" in path.read_text().splitlines()
    assert read_edge_list(path) == g


@pytest.mark.parametrize(
    "text",
    ["3\n1 2\n2 x\n", "3\n1 2 3\n", "3\n1\n", "three\n1 2\n2 3\n", "3 4\n1 2\n2 3\n"],
    ids=["non_integer_vertex", "three_columns", "one_column", "non_integer_header", "long_header"],
)
def test_malformed_edge_list_is_bad_params(tmp_path, text):
    """Test that unparsable edge lists raise TopologyError with BAD_PARAMS."""
    path = tmp_path / "edges.txt"
    path.write_text(text)
    with pytest.raises(TopologyError) as exc:
        read_edge_list(path)
    assert exc.value.code == "BAD_PARAMS"
    assert "malformed" in str(exc.value)


def test_empty_edge_list_is_rejected(tmp_path):
    """Test that an empty file is refused."""
    path = tmp_path / "edges.txt"
    path.write_text("\n")
    with pytest.raises(TopologyError):
        read_edge_list(path)
