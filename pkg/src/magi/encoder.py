"""Graph encoders with hand-written backward passes.

Two architectures: a symmetric-normalized convolution (self-loop added,
messages scaled by 1/sqrt((deg_u+1)(deg_v+1))) and a mean-aggregator
encoder (separate self and neighbor weights).  Every layer applies a
LeakyReLU; the final output is L2 row-normalized so inner products between
embeddings are cosine similarities.

Training math runs in the dtype of the weights (float32 in production);
the test suite re-runs everything in float64 against finite differences.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .graph import CsrGraph, InducedSubgraph
from .walks import INIT_STAGE

GCN = "gcn"
SAGE = "sage"

_LAYER_KEYS = {GCN: ("W",), SAGE: ("W_self", "W_nbr")}


@dataclass
class EncoderParams:
    arch: str
    dims: list[int]
    leaky_slope: float
    layers: list[dict[str, np.ndarray]]

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def dtype(self) -> np.dtype:
        return self.layers[0]["W" if self.arch == GCN else "W_self"].dtype

    def weight_keys(self) -> tuple[str, ...]:
        return _LAYER_KEYS[self.arch]


@dataclass
class OptimizerState:
    """Adaptive-moment state with decoupled weight decay."""

    lr: float
    weight_decay: float
    step: int
    m: list[dict[str, np.ndarray]]
    v: list[dict[str, np.ndarray]]
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class EncoderWorkspace:
    """Per-layer intermediates retained by forward for the backward pass."""

    params: EncoderParams
    prop: object
    inputs: list[np.ndarray] = field(default_factory=list)
    aggregates: list[np.ndarray] = field(default_factory=list)
    pre_activations: list[np.ndarray] = field(default_factory=list)
    prenorm: np.ndarray | None = None
    output: np.ndarray | None = None
    safe_norms: np.ndarray | None = None


def init_params(arch: str, dims: list[int], leaky_slope: float, seed: int,
                dtype=np.float32) -> EncoderParams:
    """Glorot-uniform initialization, deterministic in ``seed``."""
    if arch not in (GCN, SAGE):
        raise ValueError(f"unknown architecture {arch!r}")
    if len(dims) < 2:
        raise ValueError("need at least input and output dims")
    layers = []
    for li in range(len(dims) - 1):
        fan_in, fan_out = dims[li], dims[li + 1]
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        layer = {}
        for wi, key in enumerate(_LAYER_KEYS[arch]):
            rng = np.random.default_rng(
                np.random.SeedSequence(entropy=seed, spawn_key=(INIT_STAGE, li, wi)))
            layer[key] = rng.uniform(-bound, bound, (fan_in, fan_out)).astype(dtype)
        layers.append(layer)
    return EncoderParams(arch, list(dims), float(leaky_slope), layers)


def build_propagator(graph: CsrGraph, arch: str, dtype=np.float32):
    """Sparse message-passing operator(s) for one graph.

    Reusable across forward calls while the graph and dtype are unchanged.
    """
    n = graph.num_nodes
    adj = sp.csr_matrix(
        (np.ones(len(graph.neighbors), dtype=dtype), graph.neighbors,
         graph.row_offsets), shape=(n, n))
    if arch == GCN:
        inv_sqrt = (1.0 / np.sqrt(graph.degrees + 1.0)).astype(dtype)
        hat = adj + sp.identity(n, dtype=dtype, format="csr")
        return hat.multiply(inv_sqrt[:, None]).multiply(inv_sqrt[None, :]).tocsr()
    if arch == SAGE:
        inv = np.zeros(n, dtype=dtype)
        nz = graph.degrees > 0
        inv[nz] = 1.0 / graph.degrees[nz]
        mean = adj.multiply(inv[:, None]).tocsr()
        return mean, mean.T.tocsr()
    raise ValueError(f"unknown architecture {arch!r}")


def encoder_forward(graph: CsrGraph, feats: np.ndarray, params: EncoderParams,
                    prop=None) -> tuple[np.ndarray, EncoderWorkspace]:
    """Forward pass returning unit-norm embeddings and the workspace."""
    if feats.shape[1] != params.dims[0]:
        raise ValueError(
            f"feature dim {feats.shape[1]} != encoder input dim {params.dims[0]}")
    if feats.shape[0] != graph.num_nodes:
        raise ValueError("feature rows must match graph nodes")
    dtype = params.dtype
    if prop is None:
        prop = build_propagator(graph, params.arch, dtype)
    ws = EncoderWorkspace(params, prop)
    h = np.ascontiguousarray(feats, dtype=dtype)
    slope = dtype.type(params.leaky_slope)
    for layer in params.layers:
        if params.arch == GCN:
            agg = prop @ h
            pre = agg @ layer["W"]
        else:
            agg = prop[0] @ h
            pre = h @ layer["W_self"] + agg @ layer["W_nbr"]
        ws.inputs.append(h)
        ws.aggregates.append(agg)
        ws.pre_activations.append(pre)
        h = np.where(pre > 0, pre, slope * pre)
    ws.prenorm = h
    norms = np.linalg.norm(h, axis=1)
    safe = np.where(norms > 0, norms, 1.0).astype(dtype)
    ws.safe_norms = safe
    ws.output = h / safe[:, None]
    return ws.output, ws


def encoder_backward(ws: EncoderWorkspace,
                     d_output: np.ndarray) -> list[dict[str, np.ndarray]]:
    """Exact gradients of all weights given dLoss/dEmbedding.

    Includes the Jacobian of the final row normalization.
    """
    if ws.output is None:
        raise ValueError("workspace has no retained forward state")
    params = ws.params
    z = ws.output
    slope = params.dtype.type(params.leaky_slope)
    # through y = h / ||h||:  dh = (dy - y * <dy, y>) / ||h||
    inner = np.sum(d_output * z, axis=1, keepdims=True)
    dh = (d_output - z * inner) / ws.safe_norms[:, None]
    grads: list[dict[str, np.ndarray]] = [None] * params.num_layers
    for li in range(params.num_layers - 1, -1, -1):
        pre = ws.pre_activations[li]
        dpre = dh * np.where(pre > 0, params.dtype.type(1.0), slope)
        layer = params.layers[li]
        if params.arch == GCN:
            grads[li] = {"W": ws.aggregates[li].T @ dpre}
            if li > 0:
                # the normalized operator is symmetric
                dh = ws.prop @ (dpre @ layer["W"].T)
        else:
            grads[li] = {"W_self": ws.inputs[li].T @ dpre,
                         "W_nbr": ws.aggregates[li].T @ dpre}
            if li > 0:
                dh = dpre @ layer["W_self"].T + ws.prop[1] @ (dpre @ layer["W_nbr"].T)
    return grads


def gcn_forward(sub: InducedSubgraph, feats: np.ndarray,
                params: EncoderParams) -> np.ndarray:
    if params.arch != GCN:
        raise ValueError("params are not for the convolutional encoder")
    return encoder_forward(sub.graph, feats, params)[0]


def sage_forward(sub: InducedSubgraph, feats: np.ndarray,
                 params: EncoderParams) -> np.ndarray:
    if params.arch != SAGE:
        raise ValueError("params are not for the mean-aggregator encoder")
    return encoder_forward(sub.graph, feats, params)[0]


def full_graph_embed(graph: CsrGraph, feats: np.ndarray,
                     params: EncoderParams) -> np.ndarray:
    """Whole-graph inference pass with full neighborhoods."""
    z, _ = encoder_forward(graph, feats, params)
    return z


def init_optimizer(params: EncoderParams, lr: float,
                   weight_decay: float) -> OptimizerState:
    zeros = lambda: [
        {k: np.zeros_like(layer[k]) for k in params.weight_keys()}
        for layer in params.layers
    ]
    return OptimizerState(float(lr), float(weight_decay), 0, zeros(), zeros())


def optimizer_step(params: EncoderParams, grads: list[dict[str, np.ndarray]],
                   state: OptimizerState) -> tuple[EncoderParams, OptimizerState]:
    """One adaptive-moment update with decoupled weight decay, in place."""
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for li, layer in enumerate(params.layers):
        for key in params.weight_keys():
            g = grads[li][key]
            if not np.all(np.isfinite(g)):
                raise ValueError(f"non-finite gradient in layer {li} weight {key}")
            m = state.m[li][key]
            v = state.v[li][key]
            m *= state.beta1
            m += (1.0 - state.beta1) * g
            v *= state.beta2
            v += (1.0 - state.beta2) * (g * g)
            w = layer[key]
            update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
            w -= state.lr * update
            if state.weight_decay:
                w -= state.lr * state.weight_decay * w
    return params, state


# ---------------------------------------------------------------------------
# checkpoint format: versioned binary, explicitly little-endian
# ---------------------------------------------------------------------------

_MAGIC = b"MAGI"
_VERSION = 1
_ARCH_CODE = {GCN: 0, SAGE: 1}
_ARCH_NAME = {v: k for k, v in _ARCH_CODE.items()}
_DTYPE_CODE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_DTYPE_NAME = {0: np.dtype(np.float32), 1: np.dtype(np.float64)}


class CheckpointError(ValueError):
    """Raised for unreadable or mismatched checkpoint files."""


def save_checkpoint(path, params: EncoderParams,
                    state: OptimizerState | None = None,
                    epochs_done: int = 0) -> None:
    dtype = params.dtype
    out = bytearray()
    out += _MAGIC
    out += struct.pack("<IBB", _VERSION, _ARCH_CODE[params.arch],
                       _DTYPE_CODE[np.dtype(dtype)])
    out += struct.pack("<d", params.leaky_slope)
    out += struct.pack("<I", len(params.dims))
    out += struct.pack(f"<{len(params.dims)}I", *params.dims)
    out += struct.pack("<QB", epochs_done, 1 if state is not None else 0)
    if state is not None:
        out += struct.pack("<Qdd", state.step, state.lr, state.weight_decay)
    le = np.dtype(dtype).newbyteorder("<")
    for layer in params.layers:
        for key in params.weight_keys():
            out += np.ascontiguousarray(layer[key], dtype=le).tobytes()
    if state is not None:
        for moments in (state.m, state.v):
            for layer in moments:
                for key in params.weight_keys():
                    out += np.ascontiguousarray(layer[key], dtype=le).tobytes()
    Path(path).write_bytes(bytes(out))


def load_checkpoint(path) -> tuple[EncoderParams, OptimizerState | None, int]:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != _MAGIC:
        raise CheckpointError(f"{path}: not a parameter checkpoint (bad magic)")
    off = 4
    try:
        version, arch_code, dtype_code = struct.unpack_from("<IBB", raw, off)
        off += 6
        if version != _VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        if arch_code not in _ARCH_NAME or dtype_code not in _DTYPE_NAME:
            raise CheckpointError(f"{path}: unknown architecture or dtype tag")
        (leaky_slope,) = struct.unpack_from("<d", raw, off)
        off += 8
        (ndims,) = struct.unpack_from("<I", raw, off)
        off += 4
        dims = list(struct.unpack_from(f"<{ndims}I", raw, off))
        off += 4 * ndims
        epochs_done, has_opt = struct.unpack_from("<QB", raw, off)
        off += 9
        state = None
        if has_opt:
            step, lr, wd = struct.unpack_from("<Qdd", raw, off)
            off += 24
        arch = _ARCH_NAME[arch_code]
        dtype = _DTYPE_NAME[dtype_code]
        le = dtype.newbyteorder("<")

        def read_stack():
            nonlocal off
            stack = []
            for li in range(len(dims) - 1):
                shape = (dims[li], dims[li + 1])
                layer = {}
                for key in _LAYER_KEYS[arch]:
                    nbytes = shape[0] * shape[1] * dtype.itemsize
                    if off + nbytes > len(raw):
                        raise CheckpointError(f"{path}: truncated checkpoint")
                    arr = np.frombuffer(raw, dtype=le, count=shape[0] * shape[1],
                                        offset=off).astype(dtype).reshape(shape)
                    layer[key] = arr
                    off += nbytes
                stack.append(layer)
            return stack

        params = EncoderParams(arch, dims, leaky_slope, read_stack())
        if has_opt:
            state = OptimizerState(lr, wd, step, read_stack(), read_stack())
        if off != len(raw):
            raise CheckpointError(f"{path}: trailing bytes in checkpoint")
        return params, state, epochs_done
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated checkpoint") from exc


def export_params_csv(params: EncoderParams, out_dir) -> list[Path]:
    """Debug dump: one CSV per weight matrix."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for li, layer in enumerate(params.layers):
        for key in params.weight_keys():
            dest = out_dir / f"layer{li}_{key}.csv"
            np.savetxt(dest, layer[key], delimiter=",")
            written.append(dest)
    return written
