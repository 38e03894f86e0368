"""
Network Topology

Represents the connected undirected network the nodes communicate over and
derives the matrices used by the solvers and the convergence checker:

- A: adjacency (0/1, symmetric, zero diagonal)
- D: degree matrix diag(V_1, ..., V_N)
- D - A: graph Laplacian
- D + A: signless Laplacian

Node indices are dense 0-based integers. A Topology is immutable once built,
so every solver worker can read it concurrently.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path

import networkx as nx
import numpy as np

from .errors import DisconnectedGraph, InvalidEdge

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Topology:
    """
    Connected undirected graph G(N, E).

    Attributes:
        n_nodes: Number of nodes N
        edges: Sorted tuple of (i, j) pairs with i < j
        adjacency: N x N integer matrix A (read-only)
        degrees: Length-N integer vector V (read-only)
    """
    n_nodes: int
    edges: tuple
    adjacency: np.ndarray = field(repr=False, compare=False)
    degrees: np.ndarray = field(repr=False, compare=False)
    _neighbors: tuple = field(repr=False, compare=False, default=())

    def neighbors(self, i):
        """Neighbors of node i in ascending index order"""
        return self._neighbors[i]

    @property
    def graph(self):
        """networkx view of the topology (fresh copy per call)"""
        g = nx.Graph()
        g.add_nodes_from(range(self.n_nodes))
        g.add_edges_from(self.edges)
        return g


def build_topology(n_nodes, edges):
    """
    Build a validated Topology from an explicit edge list.

    Args:
        n_nodes: Number of nodes N (>= 1)
        edges: Iterable of (i, j) pairs, unordered

    Returns:
        Topology

    Raises:
        InvalidEdge: self-loop, endpoint outside [0, N), or duplicate edge
        DisconnectedGraph: some node is unreachable
    """
    n_nodes = int(n_nodes)
    if n_nodes < 1:
        raise InvalidEdge(f"n_nodes must be >= 1, got {n_nodes}")

    seen = set()
    for pair in edges:
        i, j = (int(v) for v in pair)
        if i == j:
            raise InvalidEdge(f"self-loop at node {i}")
        if not (0 <= i < n_nodes and 0 <= j < n_nodes):
            raise InvalidEdge(f"edge ({i}, {j}) outside [0, {n_nodes})")
        key = (min(i, j), max(i, j))
        if key in seen:
            raise InvalidEdge(f"duplicate edge {key}")
        seen.add(key)

    g = nx.Graph()
    g.add_nodes_from(range(n_nodes))
    g.add_edges_from(seen)
    if not nx.is_connected(g):
        unreachable = sorted(set(range(n_nodes)) - nx.node_connected_component(g, 0))
        raise DisconnectedGraph(f"nodes {unreachable} unreachable from node 0")

    adjacency = nx.to_numpy_array(g, nodelist=range(n_nodes), dtype=np.int64)
    degrees = adjacency.sum(axis=1)
    adjacency.setflags(write=False)
    degrees.setflags(write=False)
    neighbors = tuple(tuple(int(j) for j in np.flatnonzero(adjacency[i])) for i in range(n_nodes))

    return Topology(
        n_nodes=n_nodes,
        edges=tuple(sorted(seen)),
        adjacency=adjacency,
        degrees=degrees,
        _neighbors=neighbors,
    )


def random_connected_topology(n_nodes, edge_probability, seed):
    """
    Random connected graph: a random spanning tree plus Bernoulli extra edges.

    The tree attaches each node of a random permutation to a uniformly chosen
    earlier node; every remaining pair (i < j, lexicographic order) is then
    added independently with `edge_probability`. Deterministic for a seed.

    Args:
        n_nodes: Number of nodes (>= 2)
        edge_probability: Probability in [0, 1] for each non-tree pair
        seed: Integer seed

    Returns:
        Topology
    """
    if n_nodes < 2:
        raise InvalidEdge(f"random topology needs n_nodes >= 2, got {n_nodes}")
    if not 0.0 <= edge_probability <= 1.0:
        raise ValueError(f"edge_probability must lie in [0, 1], got {edge_probability}")

    rng = np.random.default_rng(seed)
    order = rng.permutation(n_nodes)
    edges = set()
    for idx in range(1, n_nodes):
        parent = order[rng.integers(0, idx)]
        child = order[idx]
        edges.add((int(min(parent, child)), int(max(parent, child))))

    for i in range(n_nodes):
        for j in range(i + 1, n_nodes):
            if (i, j) in edges:
                continue
            if rng.random() < edge_probability:
                edges.add((i, j))

    topology = build_topology(n_nodes, sorted(edges))
    logger.debug("random topology n=%d |E|=%d seed=%s", n_nodes, len(edges), seed)
    return topology


def laplacian_matrices(t):
    """
    Laplacian and signless Laplacian of a topology.

    Returns:
        tuple: (D - A, D + A) as float N x N arrays
    """
    a = t.adjacency.astype(float)
    d = np.diag(t.degrees.astype(float))
    return d - a, d + a


def is_bipartite(t):
    """True when D + A is singular (the graph has no odd cycle)"""
    return nx.is_bipartite(t.graph)


def load_edge_list(path):
    """
    Read an edge-list file: one `i j` pair per line, `#` starts a comment.

    A header comment of the form `# nodes: N` fixes the node count; otherwise
    it is inferred as the largest index + 1.
    """
    n_nodes = None
    edges = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        body, _, comment = raw.partition("#")
        comment = comment.strip().lower()
        if comment.startswith("nodes:"):
            n_nodes = int(comment.split(":", 1)[1])
        parts = body.split()
        if not parts:
            continue
        if len(parts) != 2:
            raise InvalidEdge(f"{path}:{lineno}: expected 'i j', got {raw.strip()!r}")
        try:
            edges.append((int(parts[0]), int(parts[1])))
        except ValueError as exc:
            raise InvalidEdge(f"{path}:{lineno}: non-integer node index") from exc

    if n_nodes is None:
        n_nodes = 1 + max((max(e) for e in edges), default=0)
    return build_topology(n_nodes, edges)
