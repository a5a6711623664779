"""Sensor communication graphs and doubly stochastic weight matrices."""

from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from sklearn.utils.validation import check_array


class TopologyError(ValueError):
    """Raised for malformed node labels or edge lists."""


class DisconnectedGraphWarning(UserWarning):
    """The graph is not connected, so convergence guarantees do not apply."""


@dataclass(frozen=True)
class NetworkTopology:
    """Undirected graph over nodes ``1..node_count``.

    ``neighbors[i]`` uses zero-based indices and always contains ``i`` itself.
    """

    node_count: int
    edges: tuple[tuple[int, int], ...]
    neighbors: tuple[frozenset[int], ...] = field(repr=False)
    connected: bool
    diameter: int

    @property
    def degrees(self) -> np.ndarray:
        return np.array([len(nb) - 1 for nb in self.neighbors], dtype=int)

    def adjacency(self) -> np.ndarray:
        A = np.zeros((self.node_count, self.node_count), dtype=int)
        for i, j in self.edges:
            A[i - 1, j - 1] = A[j - 1, i - 1] = 1
        return A


def _bfs_distances(neighbors, source):
    dist = {source: 0}
    queue = deque([source])
    while queue:
        i = queue.popleft()
        for j in neighbors[i]:
            if j not in dist:
                dist[j] = dist[i] + 1
                queue.append(j)
    return dist


def build_topology(node_count: int, edges) -> NetworkTopology:
    """Validate an edge list (1-based labels) and compute connectivity and diameter.

    A single node gets diameter 1 so that the cooperative excitation sums
    reduce to the single-agent condition. For a disconnected graph the
    diameter is taken over reachable pairs only.
    """
    if int(node_count) != node_count or node_count < 1:
        raise TopologyError(f"node_count must be a positive integer, got {node_count!r}")
    node_count = int(node_count)
    seen = set()
    canonical = []
    for pair in edges:
        if len(pair) != 2:
            raise TopologyError(f"edge {pair!r} is not a pair")
        i, j = (int(v) for v in pair)
        for v in (i, j):
            if not 1 <= v <= node_count:
                raise TopologyError(f"node label {v} outside 1..{node_count}")
        if i == j:
            raise TopologyError(f"self-loop ({i}, {j}) not allowed; self weights are implicit")
        key = (min(i, j), max(i, j))
        if key in seen:
            raise TopologyError(f"duplicate edge {key}")
        seen.add(key)
        canonical.append(key)

    nbrs = [{i} for i in range(node_count)]
    for i, j in canonical:
        nbrs[i - 1].add(j - 1)
        nbrs[j - 1].add(i - 1)

    connected = len(_bfs_distances(nbrs, 0)) == node_count
    diameter = 0
    for s in range(node_count):
        diameter = max(diameter, max(_bfs_distances(nbrs, s).values()))
    return NetworkTopology(
        node_count=node_count,
        edges=tuple(canonical),
        neighbors=tuple(frozenset(nb) for nb in nbrs),
        connected=connected,
        diameter=max(diameter, 1),
    )


def ring_topology(node_count: int, chords=()) -> NetworkTopology:
    edges = [(i, i % node_count + 1) for i in range(1, node_count + 1)] if node_count > 2 else []
    if node_count == 2:
        edges = [(1, 2)]
    return build_topology(node_count, list(edges) + list(chords))


def path_topology(node_count: int) -> NetworkTopology:
    return build_topology(node_count, [(i, i + 1) for i in range(1, node_count)])


def metropolis_weights(topology: NetworkTopology) -> np.ndarray:
    """Metropolis rule: ``a_ij = 1 / (1 + max(d_i, d_j))`` on edges, self weight fills the row."""
    if not topology.connected:
        warnings.warn(
            "topology is disconnected; weights are defined but the graph is not connected",
            DisconnectedGraphWarning,
            stacklevel=2,
        )
    deg = topology.degrees
    n = topology.node_count
    W = np.zeros((n, n))
    for i, j in topology.edges:
        w = 1.0 / (1.0 + max(deg[i - 1], deg[j - 1]))
        W[i - 1, j - 1] = W[j - 1, i - 1] = w
    W[np.diag_indices(n)] = 1.0 - (W.sum(axis=1) - np.diag(W))
    return W


def check_weight_matrix(W, topology: NetworkTopology | None = None, tol: float = 1e-12) -> np.ndarray:
    """Return ``W`` as a float array after checking it is symmetric and doubly stochastic."""
    W = check_array(W, dtype=np.float64, ensure_min_samples=1, ensure_min_features=1)
    n = W.shape[0]
    if W.shape != (n, n):
        raise ValueError(f"weight matrix must be square, got {W.shape}")
    if np.any(W < 0) or np.any(W > 1):
        raise ValueError("weights must lie in [0, 1]")
    if not np.array_equal(W, W.T):
        raise ValueError("weight matrix must be symmetric")
    if np.max(np.abs(W.sum(axis=0) - 1)) > tol or np.max(np.abs(W.sum(axis=1) - 1)) > tol:
        raise ValueError("weight matrix must be doubly stochastic")
    if topology is not None:
        if topology.node_count != n:
            raise ValueError("weight matrix size does not match topology")
        mask = np.zeros((n, n), dtype=bool)
        for i, nb in enumerate(topology.neighbors):
            mask[i, list(nb)] = True
        off = ~np.eye(n, dtype=bool)
        if np.any((W > 0) & ~mask) or np.any((W[off] == 0) & mask[off]):
            raise ValueError("weight sparsity does not match the edge set")
    return W


def weight_power_floor(W, m: int) -> float:
    """Smallest entry of ``W**m``; strictly positive for connected graphs once ``m >= diameter``."""
    if m < 1:
        raise ValueError("m must be >= 1")
    return float(np.min(np.linalg.matrix_power(np.asarray(W, dtype=float), m)))
