"""Command-line surface: train, embed, cluster, eval, ablate, oracle.

Every command resolves its configuration (config file first, flags
override), records it in a run manifest next to its artifacts, and is
reproducible from that manifest alone.  Exit codes: 0 success, 1 runtime
failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path


class UsageError(Exception):
    """Bad flag combinations or invalid configuration values."""


# ---------------------------------------------------------------------------
# configuration plumbing
# ---------------------------------------------------------------------------

def _parse_config_file(path: Path) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = stripped.partition("=")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _coerce(raw: str, like) -> object:
    if isinstance(like, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"cannot parse boolean from {raw!r}")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    return raw


def _apply_config_file(parser: argparse.ArgumentParser,
                       args: argparse.Namespace,
                       argv: list[str]) -> argparse.Namespace:
    """Re-parse with config-file values as defaults; flags keep priority."""
    if not getattr(args, "config", None):
        return args
    file_values = _parse_config_file(Path(args.config))
    defaults = {}
    for key, raw in file_values.items():
        if not hasattr(args, key):
            raise UsageError(f"unknown config key {key!r}")
        defaults[key] = _coerce(raw, getattr(args, key))
    parser.set_defaults(**defaults)
    return parser.parse_args(argv)


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(out_dir: Path, command: str, config: dict,
                    inputs: dict[str, str], artifacts: dict[str, str],
                    seed, wall_clock: float, extra: dict | None = None) -> Path:
    manifest = {
        "command": command,
        "config": config,
        "inputs": {name: {"path": str(p), "sha256": _sha256(Path(p))}
                   for name, p in inputs.items()},
        "artifacts": {name: str(p) for name, p in artifacts.items()},
        "seed": seed,
        "wall_clock_seconds": round(wall_clock, 3),
        "threads": _resolved_threads(),
    }
    if extra:
        manifest.update(extra)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    return path


_THREADS: int | None = None


def _resolved_threads() -> int | None:
    return _THREADS


def _apply_threads(requested: int | None) -> None:
    global _THREADS
    if requested is None:
        env = os.environ.get("MAGI_THREADS")
        requested = int(env) if env else None
    if requested is None:
        return
    if requested < 1:
        raise UsageError("--threads must be >= 1")
    _THREADS = requested
    try:
        import threadpoolctl
        threadpoolctl.threadpool_limits(limits=requested)
    except ImportError:
        for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ[var] = str(requested)


# ---------------------------------------------------------------------------
# shared loading helpers
# ---------------------------------------------------------------------------

def _load_graph_and_features(args):
    from .graph import load_edge_list, load_features, random_features

    graph = load_edge_list(args.graph, num_nodes_hint=args.num_nodes)
    inputs = {"graph": args.graph}
    if args.features:
        feats = load_features(args.features, graph)
        inputs["features"] = args.features
    elif args.random_features:
        dim, seed = (int(x) for x in args.random_features)
        feats = random_features(graph.num_nodes, dim, seed)
    else:
        raise UsageError(
            "no node features: pass --features FILE or --random-features DIM SEED")
    return graph, feats, inputs


def _train_config(args, feature_dim=None):
    from .trainer import TrainConfig
    from .walks import WalkConfig

    try:
        walk = WalkConfig(num_walks=args.walks, depth=args.depth,
                          num_roots=args.roots, seed=args.seed)
        return TrainConfig(
            epochs=args.epochs, walk=walk, arch=args.arch,
            num_layers=args.layers, dim=args.dim,
            leaky_slope=args.alpha, tau=args.tau, lr=args.lr,
            weight_decay=args.wd, loss=args.loss, pairs=args.pairs,
            seed=args.seed, checkpoint_every=args.checkpoint_every,
            batches_per_epoch=args.batches_per_epoch,
            full_batch_threshold=args.full_batch_threshold,
            full_config_model=args.full_config_model,
            per_pair_denominator=args.per_pair_denominator,
            dense_cap=args.dense_cap, hms_order=args.hms_order)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _config_dict(cfg) -> dict:
    from dataclasses import asdict
    return asdict(cfg)


def _load_embeddings(path: Path):
    import numpy as np
    if path.suffix == ".npy":
        return np.load(path)
    return np.loadtxt(path, delimiter=",", ndmin=2)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    from .trainer import resume as resume_training
    from .trainer import train

    tic = time.perf_counter()
    graph, feats, inputs = _load_graph_and_features(args)
    cfg = _train_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint = out_dir / "checkpoint.bin"
    if args.resume:
        previous = None
        prev_manifest = Path(args.resume).parent / "manifest.json"
        if prev_manifest.exists():
            previous = json.loads(prev_manifest.read_text()).get("config")
        result = resume_training(args.resume, graph, feats, cfg,
                                 checkpoint_path=checkpoint,
                                 previous_config=previous)
    else:
        result = train(graph, feats, cfg, checkpoint_path=checkpoint)
    trace_path = out_dir / "trace.csv"
    result.trace.write_csv(trace_path, append=bool(args.resume))
    artifacts = {"checkpoint": checkpoint, "trace": trace_path}
    if args.export_csv:
        from .encoder import export_params_csv
        export_params_csv(result.params, args.export_csv)
        artifacts["weights_csv"] = args.export_csv
    _write_manifest(out_dir, "train", _config_dict(cfg), inputs, artifacts,
                    cfg.seed, time.perf_counter() - tic,
                    extra={"peak_batch_bytes": result.trace.peak_batch_bytes,
                           "epochs_done": result.epochs_done})
    done = [r for r in result.trace.records if r.loss == r.loss]
    if done:
        print(f"trained {result.epochs_done} epochs, "
              f"final loss {done[-1].loss:.6f}, "
              f"batch size {done[-1].batch_size}")
    else:
        print(f"checkpoint already covers {result.epochs_done} epochs")
    return 0


def _embeddings_from_checkpoint(args, graph, feats):
    from .encoder import full_graph_embed, load_checkpoint
    params, _, _ = load_checkpoint(args.checkpoint)
    if feats.shape[1] != params.dims[0]:
        raise UsageError(
            f"feature dim {feats.shape[1]} does not match checkpoint input "
            f"dim {params.dims[0]}")
    import numpy as np
    return full_graph_embed(graph, np.asarray(feats, dtype=params.dtype), params)


def cmd_embed(args) -> int:
    import numpy as np

    tic = time.perf_counter()
    graph, feats, inputs = _load_graph_and_features(args)
    inputs["checkpoint"] = args.checkpoint
    z = _embeddings_from_checkpoint(args, graph, feats)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if out.suffix == ".csv":
        np.savetxt(out, z, delimiter=",")
    else:
        np.save(out, z)
    _write_manifest(out.parent, "embed", {"checkpoint": args.checkpoint},
                    inputs, {"embeddings": out}, None,
                    time.perf_counter() - tic)
    print(f"wrote embeddings {z.shape[0]}x{z.shape[1]} to {out}")
    return 0


def cmd_cluster(args) -> int:
    from .clustering import kmeans

    tic = time.perf_counter()
    z = _load_embeddings(Path(args.embeddings))
    result = kmeans(z, args.k, args.seed, restarts=args.restarts)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(str(int(c)) for c in result.assignment) + "\n",
                   encoding="utf-8")
    _write_manifest(out.parent, "cluster",
                    {"k": args.k, "restarts": args.restarts},
                    {"embeddings": args.embeddings}, {"assignments": out},
                    args.seed, time.perf_counter() - tic,
                    extra={"inertia": result.inertia,
                           "iterations": result.iterations})
    print(f"k-means inertia {result.inertia:.6f} after {result.iterations} "
          f"iterations")
    return 0


def cmd_eval(args) -> int:
    import numpy as np

    from .clustering import evaluate_embeddings
    from .graph import load_edge_list, load_labels

    tic = time.perf_counter()
    inputs = {"labels": args.labels}
    if args.embeddings:
        z = _load_embeddings(Path(args.embeddings))
        inputs["embeddings"] = args.embeddings
        labels = _load_label_file(args.labels, z.shape[0])
    else:
        if not args.checkpoint or not args.graph:
            raise UsageError("eval needs either --embeddings or "
                             "--checkpoint with --graph")
        graph, feats, ginputs = _load_graph_and_features(args)
        inputs.update(ginputs)
        inputs["checkpoint"] = args.checkpoint
        z = _embeddings_from_checkpoint(args, graph, feats)
        labels = load_labels(args.labels, graph)
    k = args.k if args.k else int(np.unique(labels).size)
    if k < 2:
        raise UsageError("need at least 2 clusters to evaluate")
    report, km = evaluate_embeddings(z, labels, k, args.seed,
                                     restarts=args.restarts)
    print(report.to_json())
    print(_metrics_table(report), file=sys.stderr)
    if args.out:
        out_dir = Path(args.out)
        metrics_path = out_dir / "metrics.json"
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_path.write_text(report.to_json() + "\n", encoding="utf-8")
        _write_manifest(out_dir, "eval",
                        {"k": k, "restarts": args.restarts}, inputs,
                        {"metrics": metrics_path}, args.seed,
                        time.perf_counter() - tic,
                        extra={"inertia": km.inertia})
    return 0


def _load_label_file(path, expected: int):
    import numpy as np

    from .graph import GraphFormatError
    values = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        stripped = line.strip()
        if stripped and not stripped.startswith("#"):
            values.append(int(stripped))
    if len(values) != expected:
        raise GraphFormatError(
            f"{path}: {len(values)} labels for {expected} embedding rows")
    return np.array(values, dtype=np.int64)


def _metrics_table(report) -> str:
    rows = [("ACC", report.acc), ("NMI", report.nmi),
            ("ARI", report.ari), ("F1", report.f1)]
    lines = ["metric   value", "------   -----"]
    lines += [f"{name:<8} {value:.4f}" for name, value in rows]
    return "\n".join(lines)


def cmd_ablate(args) -> int:
    from dataclasses import replace

    import numpy as np

    from .clustering import evaluate_embeddings
    from .encoder import full_graph_embed
    from .graph import load_labels
    from .modularity import DenseCapError
    from .trainer import train

    tic = time.perf_counter()
    graph, feats, inputs = _load_graph_and_features(args)
    labels = load_labels(args.labels, graph)
    inputs["labels"] = args.labels
    k = args.k if args.k else int(np.unique(labels).size)
    seeds = [int(s) for s in args.seeds.split(",")]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    grid = [(loss, pairs) for loss in ("simclr", "simple")
            for pairs in ("magi", "ms", "ei", "hms")]
    rows = ["loss,pairs,seed,status,acc,nmi,ari,f1"]
    summary = []
    for loss_kind, pair_rule in grid:
        for seed in seeds:
            base = _train_config(args)
            cfg = replace(base, loss=loss_kind, pairs=pair_rule, seed=seed,
                          walk=replace(base.walk, seed=seed))
            try:
                result = train(graph, feats, cfg)
            except DenseCapError:
                rows.append(f"{loss_kind},{pair_rule},{seed},oom-skipped,,,,")
                summary.append((loss_kind, pair_rule, seed, None))
                continue
            z = full_graph_embed(graph, np.asarray(feats, dtype=np.float32),
                                 result.params)
            report, _ = evaluate_embeddings(z, labels, k, seed,
                                            restarts=args.restarts)
            rows.append(f"{loss_kind},{pair_rule},{seed},ok,"
                        f"{report.acc:.4f},{report.nmi:.4f},"
                        f"{report.ari:.4f},{report.f1:.4f}")
            summary.append((loss_kind, pair_rule, seed, report))
            print(f"[{loss_kind}/{pair_rule} seed={seed}] {report.to_json()}")
    csv_path = out_dir / "ablation.csv"
    csv_path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    _write_manifest(out_dir, "ablate", _config_dict(_train_config(args)),
                    inputs, {"ablation": csv_path}, args.seeds,
                    time.perf_counter() - tic)
    print(f"wrote {csv_path}")
    return 0


def cmd_oracle(args) -> int:
    from .oracle import run_all

    checks = run_all(perturb=args.perturb, fast=args.fast)
    failed = 0
    for check in checks:
        status = "PASS" if check.passed else "FAIL"
        print(f"[{status}] {check.name} (tolerance: {check.tolerance}) "
              f"- {check.detail}")
        failed += 0 if check.passed else 1
    print(f"{len(checks) - failed}/{len(checks)} oracle checks passed")
    return 0 if failed == 0 else 1


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_graph_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--graph", required=True, help="edge-list file")
    p.add_argument("--features", help="CSV feature file (row i = node i)")
    p.add_argument("--random-features", nargs=2, metavar=("DIM", "SEED"),
                   help="Gaussian feature fallback when no feature file exists")
    p.add_argument("--num-nodes", type=int, default=None,
                   help="node-count hint for graphs with trailing isolated nodes")


def _add_train_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file; flags override")
    p.add_argument("--arch", choices=("gcn", "sage"), default="gcn")
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--alpha", type=float, default=0.5,
                   help="negative slope of the activation")
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--walks", type=int, default=20)
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--roots", type=int, default=2048)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--wd", type=float, default=0.0)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--loss", choices=("simclr", "simple"), default="simclr")
    p.add_argument("--pairs", choices=("magi", "ms", "ei", "hms"),
                   default="magi")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--batches-per-epoch", type=int, default=1)
    p.add_argument("--full-batch-threshold", type=int, default=20_000)
    p.add_argument("--full-config-model", action="store_true",
                   help="subtract the exact configuration term instead of 1/|batch|")
    p.add_argument("--per-pair-denominator", action="store_true",
                   help="canonical one-positive-per-term softmax denominator")
    p.add_argument("--dense-cap", type=int, default=20_000)
    p.add_argument("--hms-order", type=int, default=2)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="magi",
        description="graph clustering via modularity-guided contrastive training")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap worker threads (or set MAGI_THREADS)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train an encoder")
    _add_graph_args(p)
    _add_train_args(p)
    p.add_argument("--out", required=True, help="artifact directory")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--export-csv", help="also dump weight matrices as CSV here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("embed", help="embed all nodes with a trained encoder")
    _add_graph_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help=".npy (or .csv) output path")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("cluster", help="k-means over an embedding file")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--out", required=True, help="assignment file (one id per line)")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("eval", help="cluster embeddings and score vs labels")
    p.add_argument("--embeddings", help="precomputed embedding file")
    p.add_argument("--checkpoint", help="encoder checkpoint (with --graph)")
    p.add_argument("--graph")
    p.add_argument("--features")
    p.add_argument("--random-features", nargs=2, metavar=("DIM", "SEED"))
    p.add_argument("--num-nodes", type=int, default=None)
    p.add_argument("--labels", required=True)
    p.add_argument("--k", type=int, default=None,
                   help="cluster count (default: number of distinct labels)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--out", help="directory for metrics.json + manifest")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the loss/pair-rule variant grid")
    _add_graph_args(p)
    _add_train_args(p)
    p.add_argument("--labels", required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--seeds", default="0", help="comma-separated seed list")
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("oracle", help="run the independent oracle checks")
    p.add_argument("--perturb", action="store_true",
                   help="inject a gradient error to prove the harness can fail")
    p.add_argument("--fast", action="store_true",
                   help="smaller instance counts for quick smoke runs")
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "config", None):
            args = _apply_config_file(parser, args, argv)
        _apply_threads(args.threads)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure -> exit 1 with diagnostic
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
