"""K-means over embeddings and partition-agreement metrics.

Accuracy and macro-F1 are computed after an optimal one-to-one matching of
predicted clusters to true labels (Hungarian solve on the contingency
table).  Mutual information is normalized by the arithmetic mean of the
two entropies.  All metrics are invariant to relabeling of either side.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linear_sum_assignment

from .loss import PairSets


@dataclass
class KMeansResult:
    centers: np.ndarray
    assignment: np.ndarray
    inertia: float
    iterations: int


@dataclass
class MetricsReport:
    acc: float
    nmi: float
    ari: float
    f1: float

    def as_dict(self) -> dict[str, float]:
        return {"acc": self.acc, "nmi": self.nmi, "ari": self.ari, "f1": self.f1}

    def to_json(self) -> str:
        return json.dumps(self.as_dict())


@dataclass
class PurityReport:
    """Fraction of derived pairs consistent with ground-truth labels:
    positives sharing a label, negatives crossing labels."""

    positive: float
    negative: float
    num_positive_pairs: int
    num_negative_pairs: int


def _plusplus_init(z: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = z.shape[0]
    centers = np.empty((k, z.shape[1]), dtype=z.dtype)
    centers[0] = z[rng.integers(n)]
    d2 = ((z - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            target = rng.random() * total
            idx = min(int(np.searchsorted(np.cumsum(d2), target)), n - 1)
        centers[i] = z[idx]
        np.minimum(d2, ((z - centers[i]) ** 2).sum(axis=1), out=d2)
    return centers


def _lloyd(z: np.ndarray, centers: np.ndarray, max_iter: int
           ) -> tuple[np.ndarray, np.ndarray, float, int, list[float]]:
    n, k = z.shape[0], centers.shape[0]
    z_sq = (z * z).sum(axis=1)
    assignment = np.full(n, -1, dtype=np.int64)
    history: list[float] = []
    iterations = 0
    for iterations in range(1, max_iter + 1):
        d2 = z_sq[:, None] - 2.0 * (z @ centers.T) + (centers * centers).sum(axis=1)
        np.maximum(d2, 0.0, out=d2)
        new_assignment = d2.argmin(axis=1)
        counts = np.bincount(new_assignment, minlength=k)
        if (counts == 0).any():
            # give each empty cluster the point farthest from its center
            dist = d2[np.arange(n), new_assignment].copy()
            for c in np.flatnonzero(counts == 0):
                far = int(dist.argmax())
                new_assignment[far] = c
                dist[far] = -1.0
            counts = np.bincount(new_assignment, minlength=k)
        history.append(float(d2[np.arange(n), new_assignment].sum()))
        onehot = sp.csr_matrix(
            (np.ones(n), new_assignment, np.arange(n + 1)), shape=(n, k))
        centers = np.asarray((onehot.T @ z)) / counts[:, None]
        if np.array_equal(new_assignment, assignment):
            assignment = new_assignment
            break
        assignment = new_assignment
    inertia = float(((z - centers[assignment]) ** 2).sum())
    return assignment, centers, inertia, iterations, history


def kmeans(z: np.ndarray, k: int, seed: int, restarts: int = 10,
           max_iter: int = 300) -> KMeansResult:
    """Lloyd iterations with distance-weighted seeding, best of ``restarts``.

    Deterministic in (seed, restarts); ties on inertia keep the lowest
    restart index.  Empty clusters are repaired by reassigning the point
    farthest from its current center.
    """
    z = np.asarray(z, dtype=np.float64)
    n = z.shape[0]
    if k < 2 or k > n:
        raise ValueError(f"k must be in [2, {n}], got {k}")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    best: KMeansResult | None = None
    for r in range(restarts):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                           spawn_key=(r,)))
        centers = _plusplus_init(z, k, rng)
        assignment, centers, inertia, iterations, _ = _lloyd(z, centers, max_iter)
        if best is None or inertia < best.inertia:
            best = KMeansResult(centers, assignment, inertia, iterations)
    return best


def _contingency(pred, truth) -> np.ndarray:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(
            f"partition sizes differ: {pred.shape[0]} vs {truth.shape[0]}")
    _, pi = np.unique(pred, return_inverse=True)
    _, ti = np.unique(truth, return_inverse=True)
    p, t = pi.max() + 1, ti.max() + 1
    table = np.bincount(pi * t + ti, minlength=p * t).reshape(p, t)
    return table


def _optimal_mapping(table: np.ndarray) -> np.ndarray:
    """Injective map predicted-cluster -> true-label maximizing agreement.

    Returns, for each predicted cluster, the matched true column, or -1
    when there are more predicted clusters than true labels.
    """
    p, t = table.shape
    size = max(p, t)
    padded = np.zeros((size, size), dtype=np.int64)
    padded[:p, :t] = table
    _, cols = linear_sum_assignment(-padded)
    mapping = cols[:p].astype(np.int64)
    mapping[mapping >= t] = -1
    return mapping


def accuracy(pred, truth) -> float:
    """Best fraction of agreeing nodes over injective cluster-to-label maps."""
    table = _contingency(pred, truth)
    mapping = _optimal_mapping(table)
    matched = sum(table[i, m] for i, m in enumerate(mapping) if m >= 0)
    return float(matched) / table.sum()


def nmi(pred, truth) -> float:
    """Mutual information normalized by the mean of the two entropies."""
    table = _contingency(pred, truth).astype(np.float64)
    n = table.sum()
    a = table.sum(axis=1)
    b = table.sum(axis=0)
    nz = table > 0
    outer = np.outer(a, b)
    mi = float((table[nz] / n * np.log(n * table[nz] / outer[nz])).sum())
    h_pred = float(-(a / n * np.log(a / n)).sum())
    h_true = float(-(b / n * np.log(b / n)).sum())
    if h_pred == 0.0 and h_true == 0.0:
        return 1.0
    return float(np.clip(mi / ((h_pred + h_true) / 2.0), 0.0, 1.0))


def ari(pred, truth) -> float:
    """Rand index adjusted for chance under the permutation model."""
    table = _contingency(pred, truth).astype(np.float64)
    comb2 = lambda x: x * (x - 1.0) / 2.0
    index = comb2(table).sum()
    sum_a = comb2(table.sum(axis=1)).sum()
    sum_b = comb2(table.sum(axis=0)).sum()
    expected = sum_a * sum_b / comb2(table.sum())
    max_index = (sum_a + sum_b) / 2.0
    if max_index == expected:
        return 1.0
    return float((index - expected) / (max_index - expected))


def macro_f1(pred, truth) -> float:
    """Macro-averaged F1 over true classes after the optimal cluster map.

    Predicted clusters left unmatched (more clusters than labels) each
    contribute a zero-F1 term to the average.
    """
    table = _contingency(pred, truth)
    mapping = _optimal_mapping(table)
    t = table.shape[1]
    true_counts = table.sum(axis=0)
    pred_counts = table.sum(axis=1)
    scores = []
    for true_id in range(t):
        matches = np.flatnonzero(mapping == true_id)
        if matches.size == 0:
            scores.append(0.0)
            continue
        p = int(matches[0])
        tp = table[p, true_id]
        scores.append(2.0 * tp / (pred_counts[p] + true_counts[true_id]))
    scores.extend(0.0 for m in mapping if m < 0)
    return float(np.mean(scores))


def evaluate_embeddings(z: np.ndarray, truth, k: int, seed: int,
                        restarts: int = 10) -> tuple[MetricsReport, KMeansResult]:
    """Cluster embeddings with k-means and score against ground truth."""
    result = kmeans(z, k, seed, restarts=restarts)
    pred = result.assignment
    report = MetricsReport(accuracy(pred, truth), nmi(pred, truth),
                           ari(pred, truth), macro_f1(pred, truth))
    return report, result


def pseudo_label_purity(pairs: PairSets, members, labels) -> PurityReport:
    """Score derived pairs against ground-truth labels.

    A positive pair counts when both nodes share a label; a negative pair
    counts when the labels differ.  Negative tallies are computed by
    complement, without materializing the negative sets.
    """
    members = np.asarray(members, dtype=np.int64)
    labels = np.asarray(labels)
    if labels.shape[0] < members.max() + 1:
        raise ValueError("labels must cover all batch members")
    local = labels[members]
    _, dense = np.unique(local, return_inverse=True)
    class_counts = np.bincount(dense)

    n = pairs.size
    npos = pairs.positive_counts()
    rows = np.repeat(np.arange(n), npos)
    cols = pairs.pos_indices
    pos_same_total = int((dense[rows] == dense[cols]).sum())
    num_pos = int(rows.size)

    same_others = class_counts[dense] - 1        # same-label peers per anchor
    pos_same_per_anchor = np.bincount(
        rows, weights=(dense[rows] == dense[cols]).astype(np.float64), minlength=n)
    neg_same = int((same_others - pos_same_per_anchor).sum())
    num_neg = n * (n - 1) - num_pos
    neg_diff = num_neg - neg_same

    positive = pos_same_total / num_pos if num_pos else 0.0
    negative = neg_diff / num_neg if num_neg else 0.0
    return PurityReport(positive, negative, num_pos, num_neg)
