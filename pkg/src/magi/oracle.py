"""Self-contained oracle checks runnable from the command line.

Each check recomputes an expected result through an independent route
(brute-force summation, dense transition powers, central finite
differences, hand-evaluated contingency tables) and compares the library
against it at an explicit tolerance.  ``perturb`` injects a deliberate
error into the gradient comparison to prove the harness can fail.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import clustering, modularity, synth
from .encoder import encoder_backward, encoder_forward, init_params
from .graph import CsrGraph
from .loss import derive_pairs, simclr_loss, simple_loss
from .walks import WalkConfig, WalkStreams, batch_similarity


@dataclass
class OracleCheck:
    name: str
    passed: bool
    tolerance: str
    detail: str


def brute_force_modularity(graph: CsrGraph, labels) -> float:
    """Literal double sum over all node pairs; O(N^2) reference."""
    n = graph.num_nodes
    two_m = 2.0 * graph.num_edges
    adj = {(int(u), int(v))
           for u in range(n) for v in graph.neighbors_of(u)}
    total = 0.0
    for i in range(n):
        for j in range(n):
            if labels[i] != labels[j]:
                continue
            a = 1.0 if (i, j) in adj else 0.0
            total += a - graph.degrees[i] * graph.degrees[j] / two_m
    return total / two_m


def transition_similarity(graph: CsrGraph, members, depth: int) -> np.ndarray:
    """Dense expected similarity: averaged 1..depth step transition
    probabilities, restricted to the member set and row-renormalized."""
    n = graph.num_nodes
    trans = np.zeros((n, n))
    rows = np.repeat(np.arange(n), graph.degrees)
    nz = graph.degrees > 0
    inv = np.zeros(n)
    inv[nz] = 1.0 / graph.degrees[nz]
    trans[rows, graph.neighbors] = inv[rows]
    acc = np.zeros((n, n))
    power = np.eye(n)
    for _ in range(depth):
        power = power @ trans
        acc += power
    members = np.asarray(members, dtype=np.int64)
    acc = acc[np.ix_(members, members)]
    sums = acc.sum(axis=1, keepdims=True)
    sums[sums == 0] = 1.0
    return acc / sums


def check_modularity_trace(num_graphs: int = 20, seed: int = 7,
                           tol: float = 1e-9) -> OracleCheck:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for gi in range(num_graphs):
        n = int(rng.integers(8, 60))
        graph = synth.erdos_renyi(n, 0.15, int(rng.integers(1 << 30)))
        labels = rng.integers(0, int(rng.integers(2, 6)), size=n)
        q_sparse = modularity.global_modularity(graph, labels)
        dense = modularity.dense_modularity_matrix(graph)
        q_trace = modularity.modularity_from_matrix(dense, labels,
                                                    graph.num_edges)
        worst = max(worst, abs(q_sparse - q_trace))
    return OracleCheck("modularity sparse-vs-trace", worst < tol, f"{tol:g}",
                       f"max |difference| = {worst:.3e} over {num_graphs} graphs")


def check_row_sums(num_batches: int = 20, seed: int = 11,
                   tol: float = 1e-9) -> OracleCheck:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for bi in range(num_batches):
        n = int(rng.integers(10, 50))
        graph = synth.erdos_renyi(n, 0.2, int(rng.integers(1 << 30)))
        dense = modularity.dense_modularity_matrix(graph)
        worst = max(worst, float(np.abs(dense.sum(axis=1)).max()))
        cfg = WalkConfig(num_walks=8, depth=2, num_roots=4, seed=int(rng.integers(1 << 30)))
        members = np.flatnonzero(graph.degrees > 0)
        if members.size < 2:
            continue
        batch = batch_similarity(graph, members, cfg)
        worst = max(worst, float(np.abs(batch.similarity.sum(axis=1) - 1.0).max()))
        worst = max(worst, float(np.abs(batch.modularity.sum(axis=1)).max()))
    return OracleCheck("row-sum invariants", worst < tol, f"{tol:g}",
                       f"max |row-sum error| = {worst:.3e} over {num_batches} draws")


def check_walk_convergence(t: int = 10_000, tol: float = 0.05,
                           seed: int = 3) -> OracleCheck:
    graph = synth.barbell(4)
    members = np.arange(graph.num_nodes)
    rows_total = 0
    rows_ok = 0
    worst = 0.0
    for depth in (1, 2, 3):
        cfg = WalkConfig(num_walks=t, depth=depth, num_roots=1, seed=seed)
        batch = batch_similarity(graph, members, cfg, WalkStreams(seed, depth))
        expected = transition_similarity(graph, members, depth)
        err = np.abs(batch.similarity - expected).sum(axis=1)
        rows_total += err.size
        rows_ok += int((err < tol).sum())
        worst = max(worst, float(err.max()))
    passed = rows_ok >= int(np.ceil(0.95 * rows_total))
    return OracleCheck(
        "walk similarity vs transition powers", passed, f"L1 < {tol:g} per row",
        f"{rows_ok}/{rows_total} rows within tolerance, worst L1 = {worst:.4f}")


def _finite_difference_instance(arch: str, loss_kind: str, seed: int,
                                perturb: bool = False) -> float:
    """Max relative error of analytic vs central-difference gradients."""
    rng = np.random.default_rng(seed)
    for attempt in range(20):
        graph = synth.erdos_renyi(6, 0.5, int(rng.integers(1 << 30)))
        members = np.flatnonzero(graph.degrees > 0)
        if members.size < 4:
            continue
        cfg = WalkConfig(num_walks=40, depth=2, num_roots=2,
                         seed=int(rng.integers(1 << 30)))
        batch = batch_similarity(graph, members, cfg)
        pairs = derive_pairs(batch)
        if pairs.num_active == 0:
            continue
        sub_graph = _restrict(graph, members)
        feats = rng.standard_normal((members.size, 5))
        params = init_params(arch, [5, 4, 3], 0.2, int(rng.integers(1 << 30)),
                             dtype=np.float64)
        tau = 0.7

        def loss_value() -> float:
            z, _ = encoder_forward(sub_graph, feats, params)
            if loss_kind == "simclr":
                return simclr_loss(z, pairs, tau)[0].value
            return simple_loss(z, pairs)[0].value

        z, ws = encoder_forward(sub_graph, feats, params)
        # keep pre-activations clear of the activation kink
        if min(float(np.abs(p).min()) for p in ws.pre_activations) < 1e-4:
            continue
        if loss_kind == "simclr":
            _, dz = simclr_loss(z, pairs, tau)
        else:
            _, dz = simple_loss(z, pairs)
        grads = encoder_backward(ws, dz)
        if perturb:
            grads[0][list(grads[0])[0]][0, 0] += 1e-2

        eps = 1e-5
        max_rel = 0.0
        for li, layer in enumerate(params.layers):
            for key in params.weight_keys():
                w = layer[key]
                g = grads[li][key]
                for idx in np.ndindex(w.shape):
                    orig = w[idx]
                    w[idx] = orig + eps
                    up = loss_value()
                    w[idx] = orig - eps
                    down = loss_value()
                    w[idx] = orig
                    fd = (up - down) / (2 * eps)
                    denom = max(abs(fd), abs(g[idx]), 1e-8)
                    max_rel = max(max_rel, abs(fd - g[idx]) / denom)
        return max_rel
    raise RuntimeError("could not build a finite-difference instance")


def _restrict(graph: CsrGraph, members: np.ndarray) -> CsrGraph:
    from .graph import induce_subgraph
    return induce_subgraph(graph, members).graph


def check_gradients(instances: int = 3, tol: float = 1e-4, seed: int = 5,
                    perturb: bool = False) -> list[OracleCheck]:
    checks = []
    for arch in ("gcn", "sage"):
        for loss_kind in ("simclr", "simple"):
            worst = 0.0
            for i in range(instances):
                worst = max(worst, _finite_difference_instance(
                    arch, loss_kind, seed + 97 * i, perturb=perturb))
            checks.append(OracleCheck(
                f"gradient finite differences [{arch}/{loss_kind}]",
                worst < tol, f"rel err < {tol:g}",
                f"max relative error = {worst:.3e} over {instances} instances"))
    return checks


def check_metric_formulas(tol: float = 1e-12) -> OracleCheck:
    # contingency [[5, 0], [1, 4]]: best mapping keeps 9 of 10 nodes
    pred = np.array([0] * 5 + [1] * 5)
    truth = np.array([0] * 5 + [0] + [1] * 4)
    errs = [abs(clustering.accuracy(pred, truth) - 0.9)]

    ident = np.array([0, 0, 1, 1, 2, 2])
    errs.append(abs(clustering.accuracy(ident, ident) - 1.0))
    errs.append(abs(clustering.nmi(ident, ident) - 1.0))
    errs.append(abs(clustering.ari(ident, ident) - 1.0))
    errs.append(abs(clustering.macro_f1(ident, ident) - 1.0))

    # one cluster against a balanced split carries no information
    one = np.zeros(8, dtype=int)
    two = np.array([0] * 4 + [1] * 4)
    errs.append(abs(clustering.nmi(one, two)))
    errs.append(abs(clustering.ari(one, two)))

    # contingency [[3, 1], [0, 2]] evaluated by explicit arithmetic
    pred = np.array([0, 0, 0, 0, 1, 1])
    truth = np.array([0, 0, 0, 1, 1, 1])
    n = 6.0
    mi = (3 / n * np.log(n * 3 / (4 * 3)) + 1 / n * np.log(n * 1 / (4 * 3))
          + 2 / n * np.log(n * 2 / (2 * 3)))
    h_pred = -(4 / n * np.log(4 / n) + 2 / n * np.log(2 / n))
    h_true = -(3 / n * np.log(3 / n) + 3 / n * np.log(3 / n))
    errs.append(abs(clustering.nmi(pred, truth) - mi / ((h_pred + h_true) / 2)))
    index = 3.0 + 0.0 + 0.0 + 1.0          # sum of C(n_ij, 2)
    sum_a = 6.0 + 1.0                       # rows 4, 2
    sum_b = 3.0 + 3.0                       # cols 3, 3
    expected = sum_a * sum_b / 15.0
    ari_hand = (index - expected) / ((sum_a + sum_b) / 2 - expected)
    errs.append(abs(clustering.ari(pred, truth) - ari_hand))

    worst = max(errs)
    return OracleCheck("clustering metric formulas", worst < tol, f"{tol:g}",
                       f"max |difference| = {worst:.3e} across {len(errs)} identities")


def run_all(perturb: bool = False, fast: bool = False) -> list[OracleCheck]:
    walk_t = 2_000 if fast else 10_000
    checks = [
        check_modularity_trace(num_graphs=5 if fast else 20),
        check_row_sums(num_batches=5 if fast else 20),
        check_walk_convergence(t=walk_t),
    ]
    checks.extend(check_gradients(instances=1 if fast else 3, perturb=perturb))
    checks.append(check_metric_formulas())
    return checks
