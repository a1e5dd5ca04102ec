"""The two per-node classifiers over the dependency graph.

Both modes share a group-wise feature extractor (three parallel
convolution filters, pooling, normalization, a linear transform and a
column-wise max). The plain mode classifies those features directly; the
graph mode first learns one scalar weight per edge from the incident node
features and the edge tag, normalizes the weights per source node, and
aggregates neighbor features through one spatial convolution with a
residual connection.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, Tensor
from .graph import EdgeList
from .simulator import DeploymentTopology

ARVALUS = "arvalus"
D_ARVALUS = "d_arvalus"
MODES = (ARVALUS, D_ARVALUS)

FEATURE_DIM = 32
N_CLASSES = 3
FILTER_SIZES = (3, 5, 7)
WINDOW = 20
DROPOUT_P = 0.5


def topology_hash(topology: DeploymentTopology) -> str:
    payload = json.dumps(topology.canonical_dict(), sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()[:16]


def xavier_uniform(shape, fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


@dataclass
class ModelParams:
    """All trainable tensors plus the static structure needed to run them."""

    mode: str
    tensors: dict[str, Tensor]
    group_slices: list[tuple[int, int, int]]  # (group id, first node, last node + 1)
    edge_src: np.ndarray
    edge_dst: np.ndarray
    edge_tags: np.ndarray
    z: int
    n_nodes: int
    topo_hash: str
    feature_dim: int = FEATURE_DIM
    n_classes: int = N_CLASSES
    filter_sizes: tuple[int, ...] = FILTER_SIZES
    window: int = WINDOW

    def trainable(self) -> dict[str, Tensor]:
        return self.tensors

    def clone_values(self) -> dict[str, np.ndarray]:
        return {k: t.values.copy() for k, t in self.tensors.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for k, t in self.tensors.items():
            t.values = np.asarray(values[k], dtype=np.float64).reshape(t.shape)

    def n_parameters(self) -> int:
        return sum(t.values.size for t in self.tensors.values())


def init_params(
    topology: DeploymentTopology,
    edge_list: EdgeList,
    mode: str,
    rng: np.random.Generator,
    feature_dim: int = FEATURE_DIM,
    n_classes: int = N_CLASSES,
    filter_sizes: tuple[int, ...] = FILTER_SIZES,
    window: int = WINDOW,
) -> ModelParams:
    """Xavier-initialized parameters; the group extractors share no weights."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    tensors: dict[str, Tensor] = {}
    slices: list[tuple[int, int, int]] = []
    in_dim = window * len(filter_sizes)
    # Groups ordered by node position so concatenating per-group outputs
    # reassembles node order 0..n-1.
    next_node = 0
    for group in sorted(topology.groups, key=lambda g: g.members[0]):
        members = group.members
        if tuple(members) != tuple(range(members[0], members[-1] + 1)) or members[0] != next_node:
            raise ValueError(f"group {group.id} members must be contiguous node ids")
        next_node = members[-1] + 1
        slices.append((group.id, members[0], members[-1] + 1))
        for size in filter_sizes:
            tensors[f"group{group.id}.conv{size}"] = Tensor(
                xavier_uniform((size,), size, size, rng), requires_grad=True
            )
        tensors[f"group{group.id}.transform"] = Tensor(
            xavier_uniform((feature_dim, in_dim), in_dim, feature_dim, rng), requires_grad=True
        )
    tensors["head.weight"] = Tensor(
        xavier_uniform((n_classes, feature_dim), feature_dim, n_classes, rng), requires_grad=True
    )
    tensors["head.bias"] = Tensor(np.zeros(n_classes), requires_grad=True)
    if mode == D_ARVALUS:
        dim = 2 * feature_dim + edge_list.z
        tensors["edge.weight"] = Tensor(xavier_uniform((dim,), dim, 1, rng), requires_grad=True)
    src, dst, tags = edge_list.arrays()
    counts = np.bincount(src, minlength=topology.n_nodes)
    if np.any(counts < 1):
        raise ValueError("every node needs at least one outgoing edge (self-loop)")
    return ModelParams(
        mode=mode,
        tensors=tensors,
        group_slices=slices,
        edge_src=src,
        edge_dst=dst,
        edge_tags=tags,
        z=edge_list.z,
        n_nodes=topology.n_nodes,
        topo_hash=topology_hash(topology),
        feature_dim=feature_dim,
        n_classes=n_classes,
        filter_sizes=tuple(filter_sizes),
        window=window,
    )


def param_count(topology: DeploymentTopology, mode: str,
                feature_dim: int = FEATURE_DIM, n_classes: int = N_CLASSES,
                filter_sizes: tuple[int, ...] = FILTER_SIZES, window: int = WINDOW) -> int:
    """Exact number of scalar trainables without instantiating them."""
    from .graph import build_edges

    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    per_group = sum(filter_sizes) + feature_dim * window * len(filter_sizes)
    total = len(topology.groups) * per_group + feature_dim * n_classes + n_classes
    if mode == D_ARVALUS:
        total += 2 * feature_dim + build_edges(topology).z
    return total


# ---------------------------------------------------------------------------
# Forward blocks. All functions take the tape first and work on Tensors.


def extract_node_features(
    tape: Tape,
    window: Tensor | np.ndarray,
    conv_filters: list[Tensor],
    transform: Tensor,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Turn one (kpi_count, window) matrix into a feature vector."""
    window = window if isinstance(window, Tensor) else Tensor(window)
    d, _length = window.shape
    out = _extractor_pipeline(tape, window, [(0, d)], [conv_filters], [transform],
                              d, training, rng)
    return tape.reshape(out, (transform.shape[0],))


def _extractor_pipeline(
    tape: Tape,
    rows: Tensor,
    blocks: list[tuple[int, int]],
    filters: list[list[Tensor]],
    transforms: list[Tensor],
    kpi_count: int,
    training: bool,
    rng: np.random.Generator | None,
) -> Tensor:
    """Extractor on (rows, L) stacked KPI rows, split into per-group blocks.

    Pipeline: per-group convolutions laid out over time -> ELU -> max-pool
    -> instance norm over each node's whole (kpi_count, L') matrix ->
    dropout -> per-group linear -> column max over each node's KPI rows.
    Returns (rows / kpi_count, F).

    The normalization deliberately spans all KPI rows of a node instead
    of each row separately: a per-row norm is scale-invariant and would
    erase the variance contrast the anomaly states live in.
    """
    conv_out = tape.block_conv1d_same(rows, filters, blocks)
    width = conv_out.shape[-1]
    stacked = tape.reshape(conv_out, (-1, kpi_count, width))
    normed = tape.reshape(tape.elu_pool_matnorm(stacked), (rows.shape[0], width))
    dropped = tape.dropout(normed, DROPOUT_P, training, rng)
    mapped = tape.block_linear(dropped, transforms, blocks)
    feature_dim = transforms[0].shape[0]
    grouped = tape.reshape(mapped, (-1, kpi_count, feature_dim))
    return tape.column_max(grouped, axis=-2)


def edge_weights(tape: Tape, node_features: Tensor, params: ModelParams) -> Tensor:
    """Row-stochastic dense adjacency from learned per-edge scores.

    Per edge (i, j): score = w . (x_i | onehot(tag) | x_j), computed as
    three slices of the weight vector so the one-hot block reduces to a
    per-tag bias. An ELU and a per-source-node softmax (self-loop always
    present) produce weights in (0, 1) summing to 1 over each row.
    """
    w = params.tensors.get("edge.weight")
    if w is None:
        raise ValueError("edge-function weight absent (plain mode parameters)")
    F = params.feature_dim
    z = params.z
    n = params.n_nodes
    batched = node_features.values.ndim == 3
    x = node_features if batched else tape.reshape(node_features, (1,) + node_features.shape)
    xs = tape.gather(x, params.edge_src, axis=1)  # (B, E, F)
    xd = tape.gather(x, params.edge_dst, axis=1)
    w_i = tape.reshape(tape.slice_vec(w, 0, F), (1, F))
    w_r = tape.slice_vec(w, F, F + z)
    w_j = tape.reshape(tape.slice_vec(w, F + z, 2 * F + z), (1, F))
    s = tape.add(
        tape.reshape(tape.linear(xs, w_i), xs.shape[:2]),
        tape.reshape(tape.linear(xd, w_j), xd.shape[:2]),
    )
    scores = tape.add(s, tape.gather(w_r, params.edge_tags, axis=0))
    dense = tape.scatter_edges(tape.elu(scores), params.edge_src, params.edge_dst, n)
    adj = tape.softmax(dense, axis=-1)
    return adj if batched else tape.reshape(adj, (n, n))


def graph_convolve(tape: Tape, node_features: Tensor, adjacency: Tensor) -> Tensor:
    """Aggregate neighbor features, then ELU, residual, and a final norm."""
    s = tape.matmul(adjacency, node_features)
    return tape.instance_norm(tape.add(tape.elu(s), node_features), axis=-2)


def classify(
    tape: Tape,
    features: Tensor,
    head_weight: Tensor,
    head_bias: Tensor,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Per-node class probabilities from feature vectors."""
    dropped = tape.dropout(features, DROPOUT_P, training, rng)
    return tape.softmax(tape.linear(dropped, head_weight, head_bias), axis=-1)


def forward(
    tape: Tape,
    windows: Tensor | np.ndarray,
    params: ModelParams,
    mode: str | None = None,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Probabilities for every node of one sample or a batch of samples.

    windows: (n_nodes, d, window) for one graph sample, or
    (batch, n_nodes, d, window) for a batch sharing the same topology.
    """
    mode = mode or params.mode
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if mode == D_ARVALUS and "edge.weight" not in params.tensors:
        raise ValueError("edge-function weight absent (plain mode parameters)")
    windows = windows if isinstance(windows, Tensor) else Tensor(windows)
    single = windows.values.ndim == 3
    x = tape.reshape(windows, (1,) + windows.shape) if single else windows
    B, n, d, length = x.shape
    if n != params.n_nodes or length != params.window:
        raise ValueError(f"sample shape {x.shape} does not match model structure")

    # Rows laid out node-major so each group occupies one contiguous block.
    rows = tape.reshape(tape.transpose(x, (1, 0, 2, 3)), (n * B * d, length))
    blocks = [(lo * B * d, hi * B * d) for _gid, lo, hi in params.group_slices]
    filters = [
        [params.tensors[f"group{gid}.conv{s}"] for s in params.filter_sizes]
        for gid, _lo, _hi in params.group_slices
    ]
    transforms = [params.tensors[f"group{gid}.transform"] for gid, _lo, _hi in params.group_slices]
    feats = _extractor_pipeline(tape, rows, blocks, filters, transforms, d, training, rng)
    node_major = tape.reshape(feats, (n, B, params.feature_dim))
    features = tape.instance_norm(tape.transpose(node_major, (1, 0, 2)), axis=-2)

    if mode == D_ARVALUS:
        adjacency = edge_weights(tape, features, params)
        features = graph_convolve(tape, features, adjacency)

    probs = classify(tape, features, params.tensors["head.weight"], params.tensors["head.bias"],
                     training, rng)
    return tape.reshape(probs, (n, params.n_classes)) if single else probs


def predict_proba(
    windows: np.ndarray,
    params: ModelParams,
    mode: str | None = None,
    chunk: int = 128,
) -> np.ndarray:
    """Inference-mode probabilities for (W, n, d, window) arrays, chunked."""
    parts = []
    for i in range(0, windows.shape[0], chunk):
        tape = Tape(record=False)
        parts.append(forward(tape, windows[i : i + chunk], params, mode, training=False).values)
    return np.concatenate(parts, axis=0) if parts else np.zeros((0, params.n_nodes, params.n_classes))
