"""Immutable CSR graph storage, file loaders, and induced subgraphs.

The graph is always a simple undirected graph: loaders symmetrize the edge
set, collapse duplicates, and drop self-loops so that degree accounting is
consistent with the configuration-model denominator 2m used elsewhere.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class GraphFormatError(ValueError):
    """Raised when an input file does not match its documented format."""


@dataclass(frozen=True)
class CsrGraph:
    """Undirected graph in compressed sparse row form.

    ``neighbors[row_offsets[v]:row_offsets[v+1]]`` are the neighbors of
    ``v``, sorted ascending, without duplicates or self-loops.  ``num_edges``
    counts undirected edges, so ``len(neighbors) == 2 * num_edges``.
    """

    num_nodes: int
    num_edges: int
    row_offsets: np.ndarray  # int64, length num_nodes + 1
    neighbors: np.ndarray    # int64, length 2 * num_edges
    degrees: np.ndarray      # int64, length num_nodes

    def neighbors_of(self, v: int) -> np.ndarray:
        return self.neighbors[self.row_offsets[v]:self.row_offsets[v + 1]]

    def __post_init__(self):
        self.row_offsets.setflags(write=False)
        self.neighbors.setflags(write=False)
        self.degrees.setflags(write=False)


@dataclass(frozen=True)
class InducedSubgraph:
    """Restriction of a parent graph to ``global_ids``.

    ``graph`` is a local CsrGraph over ``0..len(global_ids)-1`` containing
    exactly the parent edges with both endpoints in ``global_ids``.
    """

    global_ids: np.ndarray
    graph: CsrGraph
    local_index: dict[int, int] = field(repr=False)

    @property
    def num_nodes(self) -> int:
        return self.graph.num_nodes


def from_edges(src, dst, num_nodes: int | None = None) -> CsrGraph:
    """Build a normalized CsrGraph from parallel endpoint arrays.

    Symmetrizes, deduplicates, and removes self-loops.  Node count is
    ``max id + 1`` unless a larger ``num_nodes`` is given; ids absent from
    any edge are retained as isolated nodes.
    """
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    if src.shape != dst.shape:
        raise ValueError("endpoint arrays must have equal length")
    if src.size and (src.min() < 0 or dst.min() < 0):
        raise ValueError("node ids must be non-negative")

    n = int(max(src.max(initial=-1), dst.max(initial=-1)) + 1)
    if num_nodes is not None:
        if num_nodes < n:
            raise ValueError(f"num_nodes={num_nodes} smaller than max id {n - 1}")
        n = int(num_nodes)

    keep = src != dst
    u = np.concatenate([src[keep], dst[keep]])
    v = np.concatenate([dst[keep], src[keep]])
    if u.size:
        # unique directed pairs; encoding is safe for n < 2**31
        code = u * np.int64(n) + v
        code = np.unique(code)
        u, v = code // n, code % n
    row_offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(u, minlength=n), out=row_offsets[1:])
    degrees = np.diff(row_offsets)
    return CsrGraph(n, u.size // 2, row_offsets, v.copy(), degrees)


def load_edge_list(path, num_nodes_hint: int | None = None) -> CsrGraph:
    """Load a whitespace-separated ``src dst`` edge list.

    Lines starting with ``#`` and blank lines are ignored.  The result is
    normalized (symmetric, deduplicated, no self-loops); isolated nodes are
    retained up to the maximum id seen or ``num_nodes_hint``.
    """
    path = Path(path)
    srcs: list[int] = []
    dsts: list[int] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split()
            if len(parts) != 2:
                raise GraphFormatError(
                    f"{path}:{lineno}: expected 'src dst', got {len(parts)} fields")
            try:
                a, b = int(parts[0]), int(parts[1])
            except ValueError:
                raise GraphFormatError(
                    f"{path}:{lineno}: non-integer node id in {stripped!r}") from None
            if a < 0 or b < 0:
                raise GraphFormatError(f"{path}:{lineno}: negative node id")
            srcs.append(a)
            dsts.append(b)
    if not srcs:
        raise GraphFormatError(f"{path}: no edges found")
    return from_edges(np.array(srcs), np.array(dsts), num_nodes=num_nodes_hint)


def write_edge_list(graph: CsrGraph, path) -> None:
    """Write one ``u v`` line per undirected edge (u < v)."""
    u = np.repeat(np.arange(graph.num_nodes, dtype=np.int64), graph.degrees)
    v = graph.neighbors
    keep = u < v
    buf = io.StringIO()
    for a, b in zip(u[keep], v[keep]):
        buf.write(f"{a} {b}\n")
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def load_features(path, graph: CsrGraph) -> np.ndarray:
    """Load a headerless numeric CSV with one row per node, in node order.

    Returns a float64 array of shape (num_nodes, dim).  Raises
    GraphFormatError on row-count mismatch, ragged rows, or non-numeric /
    non-finite cells, naming the offending location.
    """
    path = Path(path)
    if path.suffix == ".npy":
        values = np.load(path)
        if values.ndim != 2:
            raise GraphFormatError(f"{path}: expected a 2-D array")
        values = np.asarray(values, dtype=np.float64)
    else:
        values = _parse_csv(path)
    if values.shape[0] != graph.num_nodes:
        raise GraphFormatError(
            f"{path}: {values.shape[0]} feature rows for {graph.num_nodes} nodes")
    bad = ~np.isfinite(values)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise GraphFormatError(f"{path}: non-finite value at row {r + 1}, column {c + 1}")
    return values


def _parse_csv(path: Path) -> np.ndarray:
    rows: list[np.ndarray] = []
    width = None
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            try:
                row = np.fromstring(stripped, dtype=np.float64, sep=",")
            except Exception:
                row = np.array([])
            cells = stripped.split(",")
            if row.size != len(cells):
                # np.fromstring stops at the first bad token; locate it
                for col, cell in enumerate(cells, start=1):
                    try:
                        float(cell)
                    except ValueError:
                        raise GraphFormatError(
                            f"{path}: non-numeric cell at row {lineno}, "
                            f"column {col}: {cell.strip()!r}") from None
                raise GraphFormatError(f"{path}: malformed row {lineno}")
            if width is None:
                width = row.size
            elif row.size != width:
                raise GraphFormatError(
                    f"{path}: row {lineno} has {row.size} columns, expected {width}")
            rows.append(row)
    if not rows:
        raise GraphFormatError(f"{path}: empty feature file")
    return np.vstack(rows)


def load_labels(path, graph: CsrGraph) -> np.ndarray:
    """Load one integer label per line, in node order."""
    path = Path(path)
    labels: list[int] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            try:
                labels.append(int(stripped))
            except ValueError:
                raise GraphFormatError(
                    f"{path}:{lineno}: non-integer label {stripped!r}") from None
    if len(labels) != graph.num_nodes:
        raise GraphFormatError(
            f"{path}: {len(labels)} labels for {graph.num_nodes} nodes")
    return np.array(labels, dtype=np.int64)


def random_features(num_rows: int, dim: int, seed: int) -> np.ndarray:
    """Unit-variance Gaussian feature fallback for graphs without attributes."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(5,)))
    return rng.standard_normal((num_rows, dim))


def induce_subgraph(graph: CsrGraph, nodes) -> InducedSubgraph:
    """Restrict the graph to ``nodes``, keeping edges with both ends inside.

    ``nodes`` must be distinct, valid ids; they are sorted internally so the
    local CSR keeps per-row neighbor ordering.
    """
    ids = np.unique(np.asarray(nodes, dtype=np.int64))
    if ids.size != np.asarray(nodes).size:
        raise ValueError("subgraph node ids must be distinct")
    if ids.size == 0:
        raise ValueError("subgraph needs at least one node")
    if ids[0] < 0 or ids[-1] >= graph.num_nodes:
        raise ValueError(f"node id out of range: {ids[0] if ids[0] < 0 else ids[-1]}")

    g2l = np.full(graph.num_nodes, -1, dtype=np.int64)
    g2l[ids] = np.arange(ids.size)

    starts = graph.row_offsets[ids]
    counts = graph.degrees[ids]
    # gather all neighbor slices of the member rows
    gather = _slice_gather_index(starts, counts)
    local_nbrs = g2l[graph.neighbors[gather]]
    keep = local_nbrs >= 0
    row_of = np.repeat(np.arange(ids.size), counts)
    kept_per_row = np.bincount(row_of[keep], minlength=ids.size)
    row_offsets = np.zeros(ids.size + 1, dtype=np.int64)
    np.cumsum(kept_per_row, out=row_offsets[1:])
    local = CsrGraph(int(ids.size), int(keep.sum() // 2), row_offsets,
                     local_nbrs[keep], kept_per_row.astype(np.int64))
    local_index = {int(g): int(l) for l, g in enumerate(ids)}
    return InducedSubgraph(ids, local, local_index)


def _slice_gather_index(starts: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Index array concatenating ranges [starts[i], starts[i]+counts[i])."""
    nz = counts > 0
    s, c = starts[nz], counts[nz]
    total = int(c.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    step = np.ones(total, dtype=np.int64)
    step[0] = s[0]
    boundaries = np.cumsum(c)[:-1]
    step[boundaries] = s[1:] - (s[:-1] + c[:-1]) + 1
    return np.cumsum(step)
