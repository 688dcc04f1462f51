"""Two-stage random-walk sampling.

Stage one grows a sub-community around each root by keeping nodes visited
more often than the mean; the union over roots forms a training batch.
Stage two walks again from every batch member, turning in-batch visit
counts into a row-stochastic similarity matrix S and the batch modularity
matrix S - 1/|batch|.

Every walk draws from its own RNG stream keyed by (seed, epoch, stage,
node id), so results are bit-identical regardless of execution order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import CsrGraph

# stream tags; keep these stable, they define the reproducible RNG layout
S1_STAGE = 1
S2_STAGE = 2
ROOT_STAGE = 3
INIT_STAGE = 4


@dataclass(frozen=True)
class WalkConfig:
    """Walk hyperparameters: t walks of depth l from each of n roots."""

    num_walks: int
    depth: int
    num_roots: int
    seed: int = 0

    def __post_init__(self):
        if self.num_walks < 1 or self.depth < 1 or self.num_roots < 1:
            raise ValueError("num_walks, depth, and num_roots must all be >= 1")


@dataclass(frozen=True)
class WalkStreams:
    """Factory for deterministic per-node RNG streams."""

    seed: int
    epoch: int = 0

    def node_rng(self, stage: int, node: int) -> np.random.Generator:
        key = np.random.SeedSequence(entropy=self.seed,
                                     spawn_key=(stage, self.epoch, node))
        return np.random.default_rng(key)


@dataclass
class VisitCounts:
    """Visit tally of one node's walks; the node itself is never a key."""

    counts: dict[int, int]
    total: int


@dataclass(frozen=True)
class Batch:
    """A sampled node set with its similarity and modularity matrices.

    ``similarity`` rows sum to 1; ``modularity`` rows sum to 0.  Both are
    float64 and dense by design: the training-time space budget is
    quadratic in the batch size, not in the graph size.
    """

    members: np.ndarray
    local_index: dict[int, int] = field(repr=False)
    similarity: np.ndarray = field(repr=False)
    modularity: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return int(self.members.size)


def _walk_positions(graph: CsrGraph, starts: np.ndarray, t: int, l: int,
                    streams: WalkStreams, stage: int) -> np.ndarray:
    """Positions of t uniform walks of depth l from each start node.

    Returns int64 of shape (len(starts), t, l) holding the node visited at
    each step 1..l, or -1 for walkers rooted at isolated nodes.
    """
    starts = np.asarray(starts, dtype=np.int64)
    k = starts.size
    if k == 0 or graph.num_edges == 0:
        return np.full((k, t, l), -1, dtype=np.int64)

    uniforms = np.empty((k, t, l))
    for i, v in enumerate(starts):
        uniforms[i] = streams.node_rng(stage, int(v)).random((t, l))

    out = np.full((k * t, l), -1, dtype=np.int64)
    alive = np.repeat(graph.degrees[starts] > 0, t)
    cur = np.repeat(starts, t)[alive]
    flat_u = uniforms.reshape(k * t, l)[alive]
    for step in range(l):
        deg = graph.degrees[cur]
        idx = np.minimum((flat_u[:, step] * deg).astype(np.int64), deg - 1)
        cur = graph.neighbors[graph.row_offsets[cur] + idx]
        out[alive, step] = cur
    return out.reshape(k, t, l)


def random_walk_counts(graph: CsrGraph, root: int, t: int, l: int,
                       streams: WalkStreams) -> VisitCounts:
    """Aggregate visits of t depth-l walks from ``root`` over steps 1..l.

    The root's own occurrences are excluded from the tally; an isolated
    root yields empty counts.
    """
    pos = _walk_positions(graph, np.array([root]), t, l, streams, S1_STAGE)
    flat = pos.ravel()
    flat = flat[(flat >= 0) & (flat != root)]
    ids, counts = np.unique(flat, return_counts=True)
    return VisitCounts({int(i): int(c) for i, c in zip(ids, counts)},
                       int(counts.sum()))


def filter_sub_community(root: int, visits: VisitCounts) -> set[int]:
    """Keep nodes visited strictly more often than the mean, plus the root.

    A single-entry visit set is admitted as-is: a degree-one node's only
    neighbor can never beat its own mean under the strict rule.
    """
    if not visits.counts:
        return {root}
    if len(visits.counts) == 1:
        return {root, next(iter(visits.counts))}
    mean = visits.total / len(visits.counts)
    return {root} | {u for u, c in visits.counts.items() if c > mean}


def build_batch(graph: CsrGraph, roots, cfg: WalkConfig,
                streams: WalkStreams | None = None) -> np.ndarray:
    """Union of the filtered sub-communities of all roots, sorted."""
    roots = np.asarray(roots, dtype=np.int64)
    if np.unique(roots).size != roots.size:
        raise ValueError("roots must be distinct")
    if streams is None:
        streams = WalkStreams(cfg.seed)
    pos = _walk_positions(graph, roots, cfg.num_walks, cfg.depth, streams, S1_STAGE)
    members: set[int] = set()
    for i, root in enumerate(roots):
        flat = pos[i].ravel()
        flat = flat[(flat >= 0) & (flat != root)]
        ids, counts = np.unique(flat, return_counts=True)
        visits = VisitCounts({int(a): int(c) for a, c in zip(ids, counts)},
                             int(counts.sum()))
        members |= filter_sub_community(int(root), visits)
    return np.array(sorted(members), dtype=np.int64)


def batch_similarity(graph: CsrGraph, members, cfg: WalkConfig,
                     streams: WalkStreams | None = None,
                     full_config_model: bool = False) -> Batch:
    """Stage-two walks: per-member visit distribution over the batch.

    Walks run on the full graph; only steps landing on batch members are
    counted (self-revisits included).  Rows are normalized to probabilities;
    a member whose walks never hit the batch gets a uniform row.  By default
    the configuration term is the uniform 1/|batch|; ``full_config_model``
    instead subtracts rowsum*colsum/total computed from S itself.
    """
    members = np.asarray(members, dtype=np.int64)
    if members.size < 2:
        raise ValueError("batch similarity needs at least 2 members")
    if np.unique(members).size != members.size:
        raise ValueError("batch members must be distinct")
    members = np.sort(members)
    if streams is None:
        streams = WalkStreams(cfg.seed)

    b = members.size
    pos = _walk_positions(graph, members, cfg.num_walks, cfg.depth,
                          streams, S2_STAGE)
    g2l = np.full(graph.num_nodes, -1, dtype=np.int64)
    g2l[members] = np.arange(b)
    flat = pos.reshape(b, -1)
    local = np.where(flat >= 0, g2l[np.maximum(flat, 0)], -1)
    hit = local >= 0
    rows = np.broadcast_to(np.arange(b, dtype=np.int64)[:, None], local.shape)
    counts = np.bincount(rows[hit] * b + local[hit], minlength=b * b)
    counts = counts.astype(np.float64).reshape(b, b)

    row_sums = counts.sum(axis=1)
    similarity = np.empty_like(counts)
    walked = row_sums > 0
    similarity[walked] = counts[walked] / row_sums[walked, None]
    similarity[~walked] = 1.0 / b

    if full_config_model:
        col = similarity.sum(axis=0)
        row = similarity.sum(axis=1)
        modularity = similarity - np.outer(row, col) / similarity.sum()
    else:
        modularity = similarity - 1.0 / b

    local_index = {int(g): int(i) for i, g in enumerate(members)}
    return Batch(members, local_index, similarity, modularity)
