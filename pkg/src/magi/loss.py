"""Positive/negative pair derivation and the contrastive losses.

Pairs come from the sign of the batch modularity matrix: entries above zero
are positives, the rest negatives (diagonal excluded).  Alternative rules
used by the ablation grid: the sign of the exact global modularity entries
(``ms``), plain edge indicators (``ei``), and the sign of the high-order
modularity matrix (``hms``, dense and therefore small graphs only).

Both losses operate on unit-norm embedding rows and return analytic
gradients alongside their values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import CsrGraph, induce_subgraph
from .modularity import DENSE_CAP_DEFAULT, high_order_modularity_matrix
from .walks import Batch

PAIR_RULES = ("magi", "ms", "ei", "hms")


@dataclass(frozen=True)
class PairSets:
    """Per-anchor positive sets in CSR layout; negatives are the complement.

    Anchor v's positives are ``pos_indices[pos_indptr[v]:pos_indptr[v+1]]``;
    its negatives are every other index except v itself.  Anchors without
    positives are inactive and contribute nothing to the losses.
    """

    size: int
    pos_indptr: np.ndarray = field(repr=False)
    pos_indices: np.ndarray = field(repr=False)
    active: np.ndarray = field(repr=False)

    def positives(self, v: int) -> np.ndarray:
        return self.pos_indices[self.pos_indptr[v]:self.pos_indptr[v + 1]]

    def negatives(self, v: int) -> np.ndarray:
        others = np.delete(np.arange(self.size), v)
        return np.setdiff1d(others, self.positives(v), assume_unique=True)

    @property
    def num_active(self) -> int:
        return int(self.active.sum())

    @property
    def num_positive_pairs(self) -> int:
        return int(self.pos_indices.size)

    def positive_counts(self) -> np.ndarray:
        return np.diff(self.pos_indptr)

    def to_mask(self) -> np.ndarray:
        mask = np.zeros((self.size, self.size), dtype=bool)
        rows = np.repeat(np.arange(self.size), self.positive_counts())
        mask[rows, self.pos_indices] = True
        return mask


@dataclass
class LossReport:
    value: float
    num_active_anchors: int
    temperature: float | None = None


def _pairs_from_mask(mask: np.ndarray) -> PairSets:
    mask = mask.copy()
    np.fill_diagonal(mask, False)
    n = mask.shape[0]
    counts = mask.sum(axis=1)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    _, cols = np.nonzero(mask)
    return PairSets(n, indptr, cols.astype(np.int64), counts > 0)


def derive_pairs(batch: Batch, rule: str = "magi",
                 graph: CsrGraph | None = None, hms_order: int = 2,
                 dense_cap: int = DENSE_CAP_DEFAULT,
                 hms_matrix: np.ndarray | None = None) -> PairSets:
    """Split each anchor's batch peers into positives and negatives.

    The default rule takes the strict sign of the batch modularity matrix.
    ``ms``/``ei``/``hms`` need the parent ``graph``; ``hms`` additionally
    materializes a dense matrix and refuses graphs above ``dense_cap``
    (pass a precomputed ``hms_matrix`` to amortize it across batches).
    """
    if rule == "magi":
        return _pairs_from_mask(batch.modularity > 0)
    if graph is None:
        raise ValueError(f"pair rule {rule!r} needs the parent graph")
    members = batch.members
    if rule in ("ms", "ei"):
        local = induce_subgraph(graph, members).graph
        mask = np.zeros((batch.size, batch.size), dtype=bool)
        u = np.repeat(np.arange(batch.size, dtype=np.int64), local.degrees)
        v = local.neighbors
        if rule == "ei":
            mask[u, v] = True
        else:
            # exact modularity entry of an edge: 1 - d_u d_v / 2m
            d = graph.degrees[members].astype(np.float64)
            keep = d[u] * d[v] < 2.0 * graph.num_edges
            mask[u[keep], v[keep]] = True
        return _pairs_from_mask(mask)
    if rule == "hms":
        if hms_matrix is None:
            hms_matrix = high_order_modularity_matrix(graph, hms_order,
                                                      cap=dense_cap)
        return _pairs_from_mask(hms_matrix[np.ix_(members, members)] > 0)
    raise ValueError(f"unknown pair rule {rule!r}; expected one of {PAIR_RULES}")


def _anchor_weights(pairs: PairSets, dtype) -> tuple[np.ndarray, int]:
    num_active = pairs.num_active
    w = np.zeros(pairs.size, dtype=dtype)
    if num_active:
        w[pairs.active] = dtype.type(1.0) / num_active
    return w, num_active


def _simclr_from_logits(logits: np.ndarray, pairs: PairSets,
                        per_pair_denominator: bool = False
                        ) -> tuple[float, np.ndarray, int]:
    """Loss and gradient in logit space; the public API wraps this.

    Printed form: each anchor's denominator sums over all of its positives
    plus all of its negatives.  Per-pair form: canonical InfoNCE, one
    positive against the anchor's negatives.
    """
    n = logits.shape[0]
    dtype = logits.dtype
    weights, num_active = _anchor_weights(pairs, dtype)
    if num_active == 0:
        raise ValueError("no anchors with positive pairs in this batch")

    npos = pairs.positive_counts()
    rows = np.repeat(np.arange(n), npos)
    cols = pairs.pos_indices

    shifted = logits.copy()
    np.fill_diagonal(shifted, -np.inf)
    rowmax = shifted.max(axis=1)
    np.exp(shifted - rowmax[:, None], out=shifted)
    np.fill_diagonal(shifted, 0.0)
    denom = shifted.sum(axis=1)

    pos_logit_sum = np.bincount(rows, weights=logits[rows, cols].astype(np.float64),
                                minlength=n)

    if not per_pair_denominator:
        lse = rowmax.astype(np.float64) + np.log(denom.astype(np.float64))
        per_anchor = -pos_logit_sum + npos * lse
        value = float(per_anchor[pairs.active].mean())
        # d/dlogit[v,u] = w_v * (npos_v * softmax_vu - [u positive for v])
        grad = shifted * (weights * npos.astype(dtype))[:, None]
        grad /= denom[:, None]
        grad[rows, cols] -= weights[rows]
        return value, grad, num_active

    pos_exp = shifted[rows, cols]
    pos_exp_sum = np.bincount(rows, weights=pos_exp.astype(np.float64),
                              minlength=n).astype(dtype)
    neg_sum = denom - pos_exp_sum
    pair_denom = pos_exp + neg_sum[rows]
    pair_loss = -(logits[rows, cols].astype(np.float64)
                  - rowmax[rows] - np.log(pair_denom.astype(np.float64)))
    per_anchor = np.bincount(rows, weights=pair_loss, minlength=n)
    value = float(per_anchor[pairs.active].mean())

    # sum over an anchor's pairs of 1/denominator, for the negative columns
    inv_sum = np.bincount(rows, weights=1.0 / pair_denom.astype(np.float64),
                          minlength=n).astype(dtype)
    grad = shifted * (weights * inv_sum)[:, None]
    pos_mask = pairs.to_mask()
    grad[pos_mask] = 0.0
    grad[rows, cols] = weights[rows] * (-1.0 + pos_exp / pair_denom)
    return value, grad, num_active


def simclr_loss(z: np.ndarray, pairs: PairSets, tau: float,
                per_pair_denominator: bool = False
                ) -> tuple[LossReport, np.ndarray]:
    """Softmax contrastive loss with temperature, averaged over active anchors.

    Returns the loss report and the gradient with respect to the embedding
    rows.  Requires unit-norm rows and tau > 0; raises if no anchor has a
    positive pair.
    """
    if tau <= 0:
        raise ValueError("temperature must be positive")
    logits = (z @ z.T) / z.dtype.type(tau)
    value, dlogits, num_active = _simclr_from_logits(
        logits, pairs, per_pair_denominator)
    dz = (dlogits + dlogits.T) @ z
    dz /= z.dtype.type(tau)
    return LossReport(value, num_active, float(tau)), dz


def simple_loss(z: np.ndarray, pairs: PairSets
                ) -> tuple[LossReport, np.ndarray]:
    """Plain similarity contrast: negatives' cosines minus positives'.

    Averaged over active anchors; with no active anchors the loss and its
    gradient are identically zero.
    """
    sims = z @ z.T
    weights, num_active = _anchor_weights(pairs, z.dtype)
    n = z.shape[0]
    if num_active == 0:
        return LossReport(0.0, 0, None), np.zeros_like(z)

    npos = pairs.positive_counts()
    rows = np.repeat(np.arange(n), npos)
    cols = pairs.pos_indices
    pos_sum = np.bincount(rows, weights=sims[rows, cols].astype(np.float64),
                          minlength=n)
    offdiag_sum = sims.sum(axis=1, dtype=np.float64) - np.diagonal(sims)
    per_anchor = offdiag_sum - 2.0 * pos_sum
    value = float(per_anchor[pairs.active].mean())

    grad = np.broadcast_to(weights[:, None], sims.shape).copy()
    np.fill_diagonal(grad, 0.0)
    grad[rows, cols] = -weights[rows]
    dz = (grad + grad.T) @ z
    return LossReport(value, num_active, None), dz
