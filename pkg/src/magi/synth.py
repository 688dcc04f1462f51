"""Synthetic graphs for tests, oracles, and scaling studies."""

from __future__ import annotations

import numpy as np

from .graph import CsrGraph, from_edges


def erdos_renyi(n: int, p: float, seed: int) -> CsrGraph:
    """G(n, p) via a dense coin-flip; intended for small n."""
    rng = np.random.default_rng(seed)
    upper = np.triu(rng.random((n, n)) < p, k=1)
    u, v = np.nonzero(upper)
    if u.size == 0:
        # keep the graph usable for modularity checks
        u, v = np.array([0]), np.array([1 % n])
    return from_edges(u, v, num_nodes=n)


def sparse_random_graph(n: int, avg_degree: float, seed: int) -> CsrGraph:
    """Uniform random edges at a fixed expected degree; scales to large n.

    Duplicates and self-loops are dropped by normalization, so the realized
    degree is marginally below ``avg_degree``.
    """
    rng = np.random.default_rng(seed)
    m = int(n * avg_degree / 2)
    u = rng.integers(0, n, size=m, dtype=np.int64)
    v = rng.integers(0, n, size=m, dtype=np.int64)
    return from_edges(u, v, num_nodes=n)


def sbm(block_sizes: list[int], p_in: float, p_out: float,
        seed: int) -> tuple[CsrGraph, np.ndarray]:
    """Planted-partition graph; returns the graph and block labels."""
    rng = np.random.default_rng(seed)
    offsets = np.concatenate([[0], np.cumsum(block_sizes)])
    n = int(offsets[-1])
    labels = np.repeat(np.arange(len(block_sizes)), block_sizes)
    us, vs = [], []
    for bi in range(len(block_sizes)):
        for bj in range(bi, len(block_sizes)):
            p = p_in if bi == bj else p_out
            rows = np.arange(offsets[bi], offsets[bi + 1])
            cols = np.arange(offsets[bj], offsets[bj + 1])
            mask = rng.random((rows.size, cols.size)) < p
            if bi == bj:
                mask = np.triu(mask, k=1)
            r, c = np.nonzero(mask)
            us.append(rows[r])
            vs.append(cols[c])
    u = np.concatenate(us)
    v = np.concatenate(vs)
    return from_edges(u, v, num_nodes=n), labels


def gaussian_block_features(labels, dim: int, shift: float,
                            seed: int) -> np.ndarray:
    """Unit-variance Gaussian features with a per-block mean offset.

    Block b's mean is ``shift`` along coordinate ``b % dim``.
    """
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(seed)
    feats = rng.standard_normal((labels.size, dim))
    feats[np.arange(labels.size), labels % dim] += shift
    return feats


def barbell(k: int) -> CsrGraph:
    """Two k-cliques joined by a single bridge edge."""
    if k < 2:
        raise ValueError("barbell needs cliques of at least 2 nodes")
    u, v = [], []
    for base in (0, k):
        for i in range(k):
            for j in range(i + 1, k):
                u.append(base + i)
                v.append(base + j)
    u.append(k - 1)
    v.append(k)
    return from_edges(np.array(u), np.array(v), num_nodes=2 * k)


def two_cliques(k: int) -> tuple[CsrGraph, np.ndarray]:
    """Two disconnected k-cliques with block labels."""
    u, v = [], []
    for base in (0, k):
        for i in range(k):
            for j in range(i + 1, k):
                u.append(base + i)
                v.append(base + j)
    labels = np.repeat([0, 1], k)
    return from_edges(np.array(u), np.array(v), num_nodes=2 * k), labels
