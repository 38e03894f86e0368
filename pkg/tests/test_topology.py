import networkx as nx
import numpy as np
import pytest

from src.errors import DisconnectedGraph, InvalidEdge
from src.topology import (
    build_topology,
    is_bipartite,
    laplacian_matrices,
    load_edge_list,
    random_connected_topology,
)


def test_path_degrees(path3):
    assert path3.degrees.tolist() == [1, 2, 1]
    assert path3.neighbors(1) == (0, 2)


def test_single_edge():
    t = build_topology(2, [(0, 1)])
    assert t.degrees.tolist() == [1, 1]


def test_disconnected_graph_rejected():
    with pytest.raises(DisconnectedGraph):
        build_topology(3, [(0, 1)])


@pytest.mark.parametrize("edges", [
    [(0, 0), (0, 1)],
    [(0, 1), (1, 3)],
    [(0, 1), (1, 0), (1, 2)],
    [(-1, 0), (0, 1)],
])
def test_invalid_edges(edges):
    with pytest.raises(InvalidEdge):
        build_topology(3, edges)


def test_adjacency_symmetric_and_read_only(ring5):
    assert np.array_equal(ring5.adjacency, ring5.adjacency.T)
    assert np.all(np.diag(ring5.adjacency) == 0)
    with pytest.raises(ValueError):
        ring5.adjacency[0, 1] = 5


def test_random_topology_deterministic():
    a = random_connected_topology(5, 0.5, seed=7)
    b = random_connected_topology(5, 0.5, seed=7)
    assert a.edges == b.edges


def test_random_topology_two_nodes():
    assert random_connected_topology(2, 0.0, seed=1).edges == ((0, 1),)


def test_random_topology_handshake():
    t = random_connected_topology(20, 0.3, seed=3)
    assert int(t.degrees.sum()) == 2 * len(t.edges)
    assert nx.is_connected(t.graph)
    assert np.all(t.degrees >= 1)


def test_random_topology_needs_two_nodes():
    with pytest.raises(InvalidEdge):
        random_connected_topology(1, 0.5, seed=0)


def test_path_laplacian(path3):
    lap, signless = laplacian_matrices(path3)
    assert np.array_equal(lap, [[1, -1, 0], [-1, 2, -1], [0, -1, 1]])
    assert np.array_equal(signless, [[1, 1, 0], [1, 2, 1], [0, 1, 1]])
    assert np.linalg.eigvalsh(signless).min() >= -1e-10


@pytest.mark.parametrize("seed", range(10))
def test_laplacians_psd_with_constant_kernel(seed):
    t = random_connected_topology(8, 0.3, seed=seed)
    lap, signless = laplacian_matrices(t)
    assert np.linalg.norm(lap @ np.ones(8)) <= 1e-12 * 8
    assert np.linalg.eigvalsh(lap).min() >= -1e-10
    assert np.linalg.eigvalsh(signless).min() >= -1e-10


def test_bipartite(path3, triangle):
    assert is_bipartite(path3)
    assert not is_bipartite(triangle)
    # D + A is singular exactly on bipartite graphs
    _, signless = laplacian_matrices(path3)
    assert abs(np.linalg.eigvalsh(signless).min()) < 1e-12


def test_load_edge_list(tmp_path):
    path = tmp_path / "g.edges"
    path.write_text("# nodes: 4\n0 1  # first\n1 2\n\n2 3\n", encoding="utf-8")
    t = load_edge_list(path)
    assert t.n_nodes == 4
    assert t.edges == ((0, 1), (1, 2), (2, 3))


def test_load_edge_list_infers_node_count(tmp_path):
    path = tmp_path / "g.edges"
    path.write_text("0 1\n1 2\n", encoding="utf-8")
    assert load_edge_list(path).n_nodes == 3


def test_load_edge_list_bad_line(tmp_path):
    path = tmp_path / "g.edges"
    path.write_text("0 1 2\n", encoding="utf-8")
    with pytest.raises(InvalidEdge):
        load_edge_list(path)
