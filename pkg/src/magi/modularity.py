"""Exact modularity quantities: global score and dense matrices.

All accumulation here is in float64 regardless of how embeddings are
trained; the row-sum-zero and trace identities below are test anchors.
"""

from __future__ import annotations

import numpy as np

from .graph import CsrGraph

DENSE_CAP_DEFAULT = 20_000


class DenseCapError(ValueError):
    """Dense N x N construction refused; these matrices exist for oracles
    and small-graph ablations only."""


def global_modularity(graph: CsrGraph, labels) -> float:
    """Partition quality: intra-community edge mass minus the
    degree-preserving null-model expectation, scaled by 1/2m.

    Computed sparsely in O(m + N*C); never materializes the dense matrix.
    """
    if graph.num_edges == 0:
        raise ValueError("modularity is undefined on an edgeless graph")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (graph.num_nodes,):
        raise ValueError("partition must assign every node")
    two_m = 2.0 * graph.num_edges
    u = np.repeat(np.arange(graph.num_nodes, dtype=np.int64), graph.degrees)
    intra = np.count_nonzero(labels[u] == labels[graph.neighbors])
    cluster_degree = np.bincount(labels, weights=graph.degrees.astype(np.float64))
    expected = float(np.dot(cluster_degree, cluster_degree)) / two_m
    return (float(intra) - expected) / two_m


def dense_modularity_matrix(graph: CsrGraph, cap: int = DENSE_CAP_DEFAULT) -> np.ndarray:
    """Dense float64 matrix with entries A_ij - d_i * d_j / 2m.

    Symmetric with zero row sums.  Refuses graphs above ``cap`` nodes.
    """
    if graph.num_edges == 0:
        raise ValueError("modularity matrix is undefined on an edgeless graph")
    n = graph.num_nodes
    if n > cap:
        raise DenseCapError(
            f"dense modularity matrix refused for N={n} > cap={cap}; "
            "this construction is for oracle checks and small graphs only")
    d = graph.degrees.astype(np.float64)
    values = _dense_adjacency(graph)
    values -= np.outer(d, d) / (2.0 * graph.num_edges)
    return values


def high_order_modularity_matrix(graph: CsrGraph, order: int,
                                 cap: int = DENSE_CAP_DEFAULT) -> np.ndarray:
    """Modularity matrix of the averaged adjacency powers mean(A^1..A^order).

    The configuration term uses the averaged matrix's generalized degrees
    (row sums) and total mass, so row sums are exactly zero and order == 1
    reduces to ``dense_modularity_matrix``.  Dense-only by design.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    if graph.num_edges == 0:
        raise ValueError("modularity matrix is undefined on an edgeless graph")
    n = graph.num_nodes
    if n > cap:
        raise DenseCapError(
            f"high-order modularity matrix refused for N={n} > cap={cap}; "
            "the dense power construction does not scale")
    adj = _dense_adjacency(graph)
    power = adj.copy()
    acc = adj.copy()
    for _ in range(order - 1):
        power = power @ adj
        acc += power
    acc /= order
    gen_degrees = acc.sum(axis=1)
    total = gen_degrees.sum()
    acc -= np.outer(gen_degrees, gen_degrees) / total
    return acc


def modularity_from_matrix(matrix: np.ndarray, labels, num_edges: int) -> float:
    """Oracle-side evaluation: (1/2m) * tr(P^T B P) for one-hot P."""
    labels = np.asarray(labels, dtype=np.int64)
    n_clusters = int(labels.max()) + 1
    onehot = np.zeros((labels.size, n_clusters))
    onehot[np.arange(labels.size), labels] = 1.0
    return float(np.trace(onehot.T @ matrix @ onehot)) / (2.0 * num_edges)


def _dense_adjacency(graph: CsrGraph) -> np.ndarray:
    n = graph.num_nodes
    adj = np.zeros((n, n))
    u = np.repeat(np.arange(n, dtype=np.int64), graph.degrees)
    adj[u, graph.neighbors] = 1.0
    return adj
