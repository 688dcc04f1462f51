"""The training loop: sample batches, contrast, update.

Each epoch draws fresh roots, grows a batch with stage-one walks, builds
the batch similarity/modularity matrices with stage-two walks, runs the
encoder on the induced subgraph, and takes one optimizer step per batch.
On graphs at or below ``full_batch_threshold`` nodes every non-isolated
node is a root, which makes the batch the whole (non-isolated) graph.

All randomness is keyed by (seed, epoch index), so a run restored from a
checkpoint at epoch k continues exactly as the uninterrupted run would.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from io import StringIO
from pathlib import Path

import numpy as np

from .encoder import (EncoderParams, OptimizerState, build_propagator,
                      encoder_backward, encoder_forward, init_optimizer,
                      init_params, load_checkpoint, optimizer_step,
                      save_checkpoint)
from .graph import CsrGraph, induce_subgraph
from .loss import derive_pairs, simclr_loss, simple_loss
from .walks import ROOT_STAGE, WalkConfig, WalkStreams, batch_similarity, build_batch

logger = logging.getLogger(__name__)

LOSS_KINDS = ("simclr", "simple")
MAX_CONSECUTIVE_SKIPS = 3


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    walk: WalkConfig
    arch: str = "gcn"
    num_layers: int = 2
    dim: int = 64
    leaky_slope: float = 0.5
    tau: float = 0.5
    lr: float = 1e-2
    weight_decay: float = 0.0
    loss: str = "simclr"
    pairs: str = "magi"
    seed: int = 0
    checkpoint_every: int = 0
    batches_per_epoch: int = 1
    full_batch_threshold: int = 20_000
    full_config_model: bool = False
    per_pair_denominator: bool = False
    dense_cap: int = 20_000
    hms_order: int = 2

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"loss must be one of {LOSS_KINDS}")
        if self.batches_per_epoch < 1:
            raise ValueError("batches_per_epoch must be >= 1")

    def encoder_dims(self, feature_dim: int) -> list[int]:
        return [feature_dim] + [self.dim] * self.num_layers


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    batch_size: int
    seconds: float
    positives: int


@dataclass
class TrainTrace:
    records: list[EpochRecord] = field(default_factory=list)
    peak_batch_bytes: int = 0

    def to_csv(self) -> str:
        out = StringIO()
        out.write("epoch,loss,batch_size,seconds,positives\n")
        for r in self.records:
            out.write(f"{r.epoch},{r.loss:.10g},{r.batch_size},"
                      f"{r.seconds:.6f},{r.positives}\n")
        return out.getvalue()

    def write_csv(self, path, append: bool = False) -> None:
        text = self.to_csv()
        path = Path(path)
        if append and path.exists():
            text = "".join(text.splitlines(keepends=True)[1:])
            with path.open("a", encoding="utf-8") as fh:
                fh.write(text)
        else:
            path.write_text(text, encoding="utf-8")


@dataclass
class TrainResult:
    params: EncoderParams
    opt_state: OptimizerState
    trace: TrainTrace
    epochs_done: int


@dataclass
class _BatchCache:
    members: np.ndarray
    sub: object
    feats: np.ndarray
    prop: object


def _loss_and_grad(z, pairs, cfg: TrainConfig):
    if cfg.loss == "simclr":
        return simclr_loss(z, pairs, cfg.tau,
                           per_pair_denominator=cfg.per_pair_denominator)
    return simple_loss(z, pairs)


def train(graph: CsrGraph, feats: np.ndarray, cfg: TrainConfig,
          checkpoint_path=None, params: EncoderParams | None = None,
          opt_state: OptimizerState | None = None,
          start_epoch: int = 0) -> TrainResult:
    """Run the training loop and return final parameters plus the trace.

    ``params``/``opt_state``/``start_epoch`` restore a checkpointed run;
    leave them unset for a fresh one.  The result is a deterministic
    function of (graph, feats, cfg) including bitwise weight content.
    """
    if feats.shape[0] != graph.num_nodes:
        raise ValueError("feature rows must match graph nodes")
    candidates = np.flatnonzero(graph.degrees > 0).astype(np.int64)
    if candidates.size < 2:
        raise ValueError("graph has too few connected nodes to train on")

    feats32 = np.ascontiguousarray(feats, dtype=np.float32)
    if params is None:
        params = init_params(cfg.arch, cfg.encoder_dims(feats.shape[1]),
                             cfg.leaky_slope, cfg.seed)
    if opt_state is None:
        opt_state = init_optimizer(params, cfg.lr, cfg.weight_decay)

    full_batch = graph.num_nodes <= cfg.full_batch_threshold
    hms_matrix = None
    if cfg.pairs == "hms":
        from .modularity import high_order_modularity_matrix
        hms_matrix = high_order_modularity_matrix(graph, cfg.hms_order,
                                                  cap=cfg.dense_cap)
    trace = TrainTrace()
    cache: _BatchCache | None = None
    consecutive_skips = 0

    for epoch in range(start_epoch, cfg.epochs):
        tic = time.perf_counter()
        losses: list[float] = []
        batch_size = 0
        positives = 0
        stepped = False
        for sub_batch in range(cfg.batches_per_epoch):
            epoch_key = epoch * cfg.batches_per_epoch + sub_batch
            streams = WalkStreams(cfg.seed, epoch_key)
            if full_batch:
                # every root joins its own sub-community, so with all
                # non-isolated nodes as roots the union is exactly that set
                # and the stage-one walks cannot change it
                members = candidates
            else:
                rng = streams.node_rng(ROOT_STAGE, 0)
                n_roots = min(cfg.walk.num_roots, candidates.size)
                roots = np.sort(rng.choice(candidates, size=n_roots,
                                           replace=False))
                members = build_batch(graph, roots, cfg.walk, streams)
            if members.size < 2:
                continue
            batch = batch_similarity(graph, members, cfg.walk, streams,
                                     full_config_model=cfg.full_config_model)
            pairs = derive_pairs(batch, cfg.pairs, graph=graph,
                                 hms_order=cfg.hms_order,
                                 dense_cap=cfg.dense_cap,
                                 hms_matrix=hms_matrix)
            if pairs.num_active == 0:
                continue
            if cache is not None and np.array_equal(cache.members, members):
                sub, bf, prop = cache.sub, cache.feats, cache.prop
            else:
                sub = induce_subgraph(graph, members)
                bf = feats32[members]
                prop = build_propagator(sub.graph, cfg.arch, np.float32)
                cache = _BatchCache(members, sub, bf, prop)
            z, ws = encoder_forward(sub.graph, bf, params, prop=prop)
            report, dz = _loss_and_grad(z, pairs, cfg)
            grads = encoder_backward(ws, dz)
            optimizer_step(params, grads, opt_state)
            stepped = True
            losses.append(report.value)
            batch_size = batch.size
            positives = pairs.num_positive_pairs
            b = batch.size
            batch_bytes = (batch.similarity.nbytes + batch.modularity.nbytes
                           + 3 * b * b * z.itemsize + 2 * z.nbytes)
            trace.peak_batch_bytes = max(trace.peak_batch_bytes, batch_bytes)

        seconds = time.perf_counter() - tic
        if not stepped:
            consecutive_skips += 1
            logger.warning("epoch %d skipped: no anchors with positive pairs",
                           epoch)
            trace.records.append(EpochRecord(epoch, float("nan"), batch_size,
                                             seconds, 0))
            if consecutive_skips >= MAX_CONSECUTIVE_SKIPS:
                raise RuntimeError(
                    f"{MAX_CONSECUTIVE_SKIPS} consecutive epochs produced no "
                    "positive pairs; the walk configuration cannot separate "
                    "this graph (try larger --walks/--depth or more roots)")
            continue
        consecutive_skips = 0
        trace.records.append(EpochRecord(
            epoch, float(np.mean(losses)), batch_size, seconds, positives))
        if (checkpoint_path is not None and cfg.checkpoint_every > 0
                and (epoch + 1) % cfg.checkpoint_every == 0):
            save_checkpoint(checkpoint_path, params, opt_state,
                            epochs_done=epoch + 1)

    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, params, opt_state,
                        epochs_done=cfg.epochs)
    return TrainResult(params, opt_state, trace, cfg.epochs)


def resume(path, graph: CsrGraph, feats: np.ndarray, cfg: TrainConfig,
           checkpoint_path=None,
           previous_config: dict | None = None) -> TrainResult:
    """Continue a checkpointed run under ``cfg``.

    Architecture and dimensions must match the checkpoint; any other
    differing hyperparameter is accepted and logged as config drift.
    ``previous_config`` (for example from a run manifest) extends drift
    detection to settings the checkpoint itself does not store, such as
    the temperature.
    """
    params, opt_state, epochs_done = load_checkpoint(path)
    mismatches = []
    if params.arch != cfg.arch:
        mismatches.append(f"arch: checkpoint {params.arch!r} vs config {cfg.arch!r}")
    expected_dims = cfg.encoder_dims(feats.shape[1])
    if params.dims != expected_dims:
        mismatches.append(f"dims: checkpoint {params.dims} vs config {expected_dims}")
    if mismatches:
        raise ValueError("checkpoint does not match config: " + "; ".join(mismatches))
    if opt_state is None:
        opt_state = init_optimizer(params, cfg.lr, cfg.weight_decay)
    drift = []
    if params.leaky_slope != cfg.leaky_slope:
        drift.append(f"leaky_slope {params.leaky_slope} -> {cfg.leaky_slope}")
        params = replace(params, leaky_slope=cfg.leaky_slope)
    if opt_state.lr != cfg.lr:
        drift.append(f"lr {opt_state.lr} -> {cfg.lr}")
        opt_state.lr = cfg.lr
    if opt_state.weight_decay != cfg.weight_decay:
        drift.append(f"weight_decay {opt_state.weight_decay} -> {cfg.weight_decay}")
        opt_state.weight_decay = cfg.weight_decay
    for key, old in (previous_config or {}).items():
        new = getattr(cfg, key, None)
        if new is not None and new != old and key not in ("lr", "weight_decay",
                                                          "leaky_slope", "epochs"):
            drift.append(f"{key} {old} -> {new}")
    if drift:
        logger.info("config drift on resume: %s", "; ".join(drift))
    if epochs_done >= cfg.epochs:
        logger.info("checkpoint already covers %d epochs; nothing to do",
                    epochs_done)
        return TrainResult(params, opt_state, TrainTrace(), epochs_done)
    return train(graph, feats, cfg, checkpoint_path=checkpoint_path,
                 params=params, opt_state=opt_state, start_epoch=epochs_done)
