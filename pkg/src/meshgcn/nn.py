"""Layers, the two-headed network, manual backprop, and checkpoints.

The network couples a graph-level classification head with a node-level
segmentation head. Node features pass through two graph-convolution
blocks (only the first layer of each block propagates over the
adjacency; deeper layers are per-node dense maps, which avoids feature
over-smoothing). The encoder output is max-pooled into a single global
vector; the classifier sees that vector concatenated with auxiliary
scalars, while the segmentation branch sees each node's local feature
concatenated with the broadcast global vector and runs two further
graph-convolution blocks down to per-node class scores.

With ``pointnet_mode`` every propagation step is skipped, which is
exactly equivalent to running the full network on an edgeless graph.

Forward passes record a tape of layer inputs and pre-activations;
``graphnet_backward`` replays it in reverse for exact gradients of
every parameter. There is no autodiff: this fixed architecture is
differentiated by hand.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field, asdict

import numpy as np

from .dtypes import DTYPE
from .errors import CheckpointError, NumericError, StructuralInputError
from .graph import NormalizedAdjacency, SurfaceGraph, normalize_adjacency
from .sparse import spmm

_MAGIC = b"GNET"
_CHECKPOINT_VERSION = 1
ACTIVATIONS = ("relu", "none")


# ---------------------------------------------------------------------------
# layers


@dataclass
class GcnLayer:
    """One propagation step: activation(adjacency @ x @ weight)."""

    weight: np.ndarray  # (f_in, f_out)
    activation: str = "relu"
    use_adjacency: bool = True

    def __post_init__(self):
        self.weight = np.ascontiguousarray(self.weight, dtype=DTYPE)
        if self.weight.ndim != 2 or min(self.weight.shape) < 1:
            raise StructuralInputError("GcnLayer weight must be 2-D, nonempty")
        if not np.all(np.isfinite(self.weight)):
            raise NumericError("GcnLayer weight must be finite")
        if self.activation not in ACTIVATIONS:
            raise StructuralInputError(f"unknown activation {self.activation!r}")


@dataclass
class DenseLayer:
    """Fully connected layer with bias: activation(x @ weight + bias)."""

    weight: np.ndarray
    bias: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        self.weight = np.ascontiguousarray(self.weight, dtype=DTYPE)
        self.bias = np.ascontiguousarray(self.bias, dtype=DTYPE)
        if self.bias.shape != (self.weight.shape[1],):
            raise StructuralInputError("bias shape must match weight columns")
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise NumericError("DenseLayer parameters must be finite")
        if self.activation not in ACTIVATIONS:
            raise StructuralInputError(f"unknown activation {self.activation!r}")


@dataclass
class GcnBlock:
    """A chain of GcnLayers; by default only the first one propagates."""

    layers: list
    first_layer_only_adjacency: bool = True

    def __post_init__(self):
        if not self.layers:
            raise StructuralInputError("GcnBlock needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.weight.shape[1] != nxt.weight.shape[0]:
                raise StructuralInputError("GcnBlock layer dimensions must chain")
        if self.first_layer_only_adjacency:
            if not self.layers[0].use_adjacency or any(
                l.use_adjacency for l in self.layers[1:]
            ):
                raise StructuralInputError(
                    "first_layer_only_adjacency requires adjacency on "
                    "layer 0 and nowhere else"
                )


@dataclass
class LayerTape:
    x: np.ndarray  # layer input
    z: np.ndarray  # pre-activation


@dataclass
class ForwardTape:
    """Everything needed to rerun the forward pass or walk it backward."""

    features: np.ndarray
    adjacency: NormalizedAdjacency | None
    aux: np.ndarray
    enc1: list = field(default_factory=list)
    enc2: list = field(default_factory=list)
    pool_argmax: np.ndarray | None = None
    global_vec: np.ndarray | None = None
    cls: list = field(default_factory=list)
    seg1: list = field(default_factory=list)
    seg2: list = field(default_factory=list)
    cls_scores: np.ndarray | None = None
    seg_scores: np.ndarray | None = None


def _activate(z, activation):
    return np.maximum(z, 0.0) if activation == "relu" else z


def _activation_grad(d_out, z, activation):
    if activation == "relu":
        return d_out * (z > 0)
    return d_out


def gcn_forward(layer: GcnLayer, adj, x):
    """Apply one layer; adj=None means propagate over the identity."""
    if x.shape[1] != layer.weight.shape[0]:
        raise StructuralInputError(
            f"layer expects {layer.weight.shape[0]} input features, "
            f"got {x.shape[1]}"
        )
    z = x @ layer.weight
    if layer.use_adjacency and adj is not None:
        if adj.num_nodes != x.shape[0]:
            raise StructuralInputError(
                f"adjacency is {adj.num_nodes} nodes, features have {x.shape[0]}"
            )
        z = spmm(adj.matrix, z)
    return _activate(z, layer.activation), LayerTape(x, z)


def gcn_backward(layer: GcnLayer, adj, tape: LayerTape, d_out):
    dz = _activation_grad(d_out, tape.z, layer.activation)
    if layer.use_adjacency and adj is not None:
        dz = spmm(adj.matrix, dz)  # propagation matrix is symmetric
    d_weight = tape.x.T @ dz
    d_x = dz @ layer.weight.T
    return d_x, d_weight


def block_forward(block: GcnBlock, adj, x):
    tapes = []
    h = x
    for layer in block.layers:
        h, tape = gcn_forward(layer, adj, h)
        tapes.append(tape)
    return h, tapes


def block_backward(block: GcnBlock, adj, tapes, d_out, grads, prefix):
    d = d_out
    for i in range(len(block.layers) - 1, -1, -1):
        d, d_weight = gcn_backward(block.layers[i], adj, tapes[i], d)
        grads[f"{prefix}.l{i}.weight"] = d_weight
    return d


def dense_forward(layer: DenseLayer, x):
    z = x @ layer.weight + layer.bias
    return _activate(z, layer.activation), LayerTape(x, z)


def dense_backward(layer: DenseLayer, tape: LayerTape, d_out):
    dz = _activation_grad(d_out, tape.z, layer.activation)
    d_weight = tape.x.T @ dz
    d_bias = dz.sum(axis=0)
    d_x = dz @ layer.weight.T
    return d_x, d_weight, d_bias


def global_max_pool(x):
    """Columnwise max plus argmax rows (ties go to the smallest index)."""
    if x.shape[0] < 1:
        raise StructuralInputError("cannot max-pool an empty matrix")
    arg = np.argmax(x, axis=0)
    return x[arg, np.arange(x.shape[1])], arg


# ---------------------------------------------------------------------------
# model


@dataclass(frozen=True)
class GraphNetConfig:
    num_features: int = 3
    enc1_sizes: tuple = (64, 64)
    enc2_sizes: tuple = (64, 128, 1024)
    cls_hidden: tuple = (512, 256)
    seg1_sizes: tuple = (512, 256, 128)
    seg2_hidden: tuple = (128,)
    num_graph_classes: int = 2
    num_node_classes: int = 2
    n_aux: int = 35
    pointnet_mode: bool = False
    adjacency_first_layer_only: bool = True

    def __post_init__(self):
        object.__setattr__(self, "enc1_sizes", tuple(self.enc1_sizes))
        object.__setattr__(self, "enc2_sizes", tuple(self.enc2_sizes))
        object.__setattr__(self, "cls_hidden", tuple(self.cls_hidden))
        object.__setattr__(self, "seg1_sizes", tuple(self.seg1_sizes))
        object.__setattr__(self, "seg2_hidden", tuple(self.seg2_hidden))
        sizes = (
            (self.num_features, self.num_graph_classes, self.num_node_classes)
            + self.enc1_sizes + self.enc2_sizes + self.cls_hidden
            + self.seg1_sizes + self.seg2_hidden
        )
        if not self.enc1_sizes or not self.enc2_sizes or not self.seg1_sizes:
            raise StructuralInputError("encoder and segmentation blocks need layers")
        if any(int(s) < 1 for s in sizes):
            raise StructuralInputError("all layer sizes must be >= 1")
        if self.n_aux < 0:
            raise StructuralInputError("n_aux must be >= 0")

    @property
    def local_dim(self) -> int:
        return self.enc1_sizes[-1]

    @property
    def global_dim(self) -> int:
        return self.enc2_sizes[-1]

    @property
    def concat_dim(self) -> int:
        return self.local_dim + self.global_dim


@dataclass
class GraphNetModel:
    config: GraphNetConfig
    enc_block1: GcnBlock
    enc_block2: GcnBlock
    cls_head: list          # DenseLayers, last one has activation "none"
    seg_block1: GcnBlock
    seg_block2: GcnBlock
    # Per-feature affine normalizer for the auxiliary vector, fitted by
    # the trainer and stored with the checkpoint. Identity by default so
    # an untrained model passes aux values through unchanged.
    aux_shift: np.ndarray | None = None
    aux_scale: np.ndarray | None = None

    def __post_init__(self):
        n = self.config.n_aux
        if self.aux_shift is None:
            self.aux_shift = np.zeros(n, dtype=DTYPE)
        if self.aux_scale is None:
            self.aux_scale = np.ones(n, dtype=DTYPE)
        self.aux_shift = np.ascontiguousarray(self.aux_shift, dtype=DTYPE)
        self.aux_scale = np.ascontiguousarray(self.aux_scale, dtype=DTYPE)
        if self.aux_shift.shape != (n,) or self.aux_scale.shape != (n,):
            raise StructuralInputError(
                "aux normalizer length must equal n_aux"
            )
        if (
            not np.all(np.isfinite(self.aux_shift))
            or not np.all(np.isfinite(self.aux_scale))
            or np.any(self.aux_scale <= 0)
        ):
            raise StructuralInputError(
                "aux_scale must be finite and positive"
            )

    @property
    def n_aux(self) -> int:
        return self.config.n_aux

    @property
    def pointnet_mode(self) -> bool:
        return self.config.pointnet_mode

    def buffers(self):
        """Non-trainable (name, array) pairs saved alongside parameters."""
        return [("aux_shift", self.aux_shift), ("aux_scale", self.aux_scale)]

    def parameters(self):
        """(name, array) pairs in fixed declaration order."""
        out = []
        for prefix, block in (
            ("enc1", self.enc_block1), ("enc2", self.enc_block2),
        ):
            for i, layer in enumerate(block.layers):
                out.append((f"{prefix}.l{i}.weight", layer.weight))
        for i, layer in enumerate(self.cls_head):
            out.append((f"cls.l{i}.weight", layer.weight))
            out.append((f"cls.l{i}.bias", layer.bias))
        for prefix, block in (
            ("seg1", self.seg_block1), ("seg2", self.seg_block2),
        ):
            for i, layer in enumerate(block.layers):
                out.append((f"{prefix}.l{i}.weight", layer.weight))
        return out

    def set_parameter(self, name: str, value: np.ndarray) -> None:
        arr = self.get_parameter(name)
        if arr.shape != value.shape:
            raise StructuralInputError(f"shape mismatch for {name}")
        arr[...] = value

    def get_parameter(self, name: str) -> np.ndarray:
        for key, arr in self.parameters():
            if key == name:
                return arr
        raise KeyError(name)


def _glorot(rng, f_in, f_out):
    limit = np.sqrt(6.0 / (f_in + f_out))
    return rng.uniform(-limit, limit, size=(f_in, f_out)).astype(DTYPE)


def init_params(config: GraphNetConfig, seed: int) -> GraphNetModel:
    """Glorot-uniform weights, zero biases, deterministic by seed."""
    rng = np.random.default_rng(seed)
    adj_rule = config.adjacency_first_layer_only

    def gcn_block(f_in, sizes, last_activation="relu"):
        layers = []
        for i, f_out in enumerate(sizes):
            is_last = i == len(sizes) - 1
            layers.append(GcnLayer(
                weight=_glorot(rng, f_in, f_out),
                activation=last_activation if is_last else "relu",
                use_adjacency=(i == 0) if adj_rule else True,
            ))
            f_in = f_out
        return GcnBlock(layers, first_layer_only_adjacency=adj_rule)

    enc1 = gcn_block(config.num_features, config.enc1_sizes)
    enc2 = gcn_block(config.enc1_sizes[-1], config.enc2_sizes)

    cls_layers = []
    f_in = config.global_dim + config.n_aux
    widths = tuple(config.cls_hidden) + (config.num_graph_classes,)
    for i, f_out in enumerate(widths):
        cls_layers.append(DenseLayer(
            weight=_glorot(rng, f_in, f_out),
            bias=np.zeros(f_out, dtype=DTYPE),
            activation="none" if i == len(widths) - 1 else "relu",
        ))
        f_in = f_out

    seg1 = gcn_block(config.concat_dim, config.seg1_sizes)
    seg2 = gcn_block(
        config.seg1_sizes[-1],
        tuple(config.seg2_hidden) + (config.num_node_classes,),
        last_activation="none",
    )
    return GraphNetModel(config, enc1, enc2, cls_layers, seg1, seg2)


# ---------------------------------------------------------------------------
# whole-network forward / backward


def graphnet_forward(model: GraphNetModel, features, adj, aux):
    """Run the full network on one graph.

    features: (N, F) node features, already coordinate-normalized.
    adj: NormalizedAdjacency, ignored when the model is in pointnet mode.
    aux: (n_aux,) raw auxiliary scalars; the model's stored normalizer
        is applied before they join the global feature.

    Returns (cls_scores (C_c,), seg_scores (N, C_s), ForwardTape).
    """
    cfg = model.config
    features = np.asarray(features, dtype=DTYPE)
    aux = np.asarray(aux, dtype=DTYPE).reshape(-1)
    if features.ndim != 2 or features.shape[1] != cfg.num_features:
        raise StructuralInputError(
            f"features must be (N, {cfg.num_features}), got {features.shape}"
        )
    if aux.shape != (cfg.n_aux,):
        raise StructuralInputError(
            f"aux must have length {cfg.n_aux}, got {aux.shape[0]}"
        )
    if not np.all(np.isfinite(features)) or not np.all(np.isfinite(aux)):
        raise NumericError("non-finite network input")
    if model.pointnet_mode:
        adj = None
    elif adj is None:
        raise StructuralInputError("adjacency required unless in pointnet mode")

    # the tape keeps the raw aux so a replay normalizes it again
    aux_in = (aux - model.aux_shift) / model.aux_scale

    tape = ForwardTape(features=features, adjacency=adj, aux=aux)
    local, tape.enc1 = block_forward(model.enc_block1, adj, features)
    feat, tape.enc2 = block_forward(model.enc_block2, adj, local)
    global_vec, tape.pool_argmax = global_max_pool(feat)

    cls_in = np.concatenate([global_vec, aux_in])[None, :]
    h = cls_in
    for layer in model.cls_head:
        h, ltape = dense_forward(layer, h)
        tape.cls.append(ltape)
    cls_scores = h[0]

    # The first segmentation layer sees [local | broadcast global]. The
    # global half contributes the same row vector everywhere, so instead
    # of materializing the N x concat_dim matrix we add a shared term.
    first = model.seg_block1.layers[0]
    w_local = first.weight[: cfg.local_dim]
    w_global = first.weight[cfg.local_dim:]
    z0 = local @ w_local + global_vec @ w_global
    if first.use_adjacency and adj is not None:
        z0 = spmm(adj.matrix, z0)
    tape.seg1 = [LayerTape(x=None, z=z0)]
    h = _activate(z0, first.activation)
    for layer in model.seg_block1.layers[1:]:
        h, ltape = gcn_forward(layer, adj, h)
        tape.seg1.append(ltape)
    seg_scores, tape.seg2 = block_forward(model.seg_block2, adj, h)

    tape.global_vec = global_vec

    tape.cls_scores = cls_scores
    tape.seg_scores = seg_scores
    return cls_scores, seg_scores, tape


def forward_graph(model: GraphNetModel, g: SurfaceGraph, aux):
    """Convenience wrapper that normalizes the graph's adjacency itself."""
    adj = None if model.pointnet_mode else normalize_adjacency(g.adjacency)
    return graphnet_forward(model, g.node_features, adj, aux)


def replay_forward(model: GraphNetModel, tape: ForwardTape):
    """Recompute the forward pass from the tape's recorded inputs."""
    cls_scores, seg_scores, _ = graphnet_forward(
        model, tape.features, tape.adjacency, tape.aux
    )
    return cls_scores, seg_scores


def graphnet_backward(model: GraphNetModel, tape: ForwardTape, d_cls, d_seg):
    """Exact gradients of every parameter for the recorded forward pass.

    d_cls: (C_c,) upstream gradient on classification scores.
    d_seg: (N, C_s) upstream gradient on segmentation scores.
    Returns a dict keyed like model.parameters().
    """
    cfg = model.config
    n = tape.features.shape[0]
    d_cls = np.asarray(d_cls, dtype=DTYPE).reshape(-1)
    d_seg = np.asarray(d_seg, dtype=DTYPE)
    if d_cls.shape != (cfg.num_graph_classes,) or d_seg.shape != (
        n, cfg.num_node_classes,
    ):
        raise StructuralInputError("upstream gradient shapes do not match model")
    if tape.pool_argmax is None or len(tape.enc1) != len(model.enc_block1.layers):
        raise StructuralInputError("tape does not match model")
    adj = tape.adjacency

    grads = {}
    d = block_backward(model.seg_block2, adj, tape.seg2, d_seg, grads, "seg2")
    for i in range(len(model.seg_block1.layers) - 1, 0, -1):
        d, d_weight = gcn_backward(model.seg_block1.layers[i], adj, tape.seg1[i], d)
        grads[f"seg1.l{i}.weight"] = d_weight

    # first segmentation layer: undo the local/global split of the forward
    first = model.seg_block1.layers[0]
    dz = _activation_grad(d, tape.seg1[0].z, first.activation)
    if first.use_adjacency and adj is not None:
        dz = spmm(adj.matrix, dz)
    local = tape.enc2[0].x  # enc block 2 input is the local feature
    col_sum = dz.sum(axis=0)
    grads["seg1.l0.weight"] = np.concatenate(
        [local.T @ dz, np.outer(tape.global_vec, col_sum)], axis=0
    )
    d_local = dz @ first.weight[: cfg.local_dim].T
    d_global = col_sum @ first.weight[cfg.local_dim:].T

    d = d_cls[None, :]
    for i in range(len(model.cls_head) - 1, -1, -1):
        d, d_weight, d_bias = dense_backward(model.cls_head[i], tape.cls[i], d)
        grads[f"cls.l{i}.weight"] = d_weight
        grads[f"cls.l{i}.bias"] = d_bias
    d_global = d_global + d[0, : cfg.global_dim]

    d_feat = np.zeros((n, cfg.global_dim), dtype=DTYPE)
    d_feat[tape.pool_argmax, np.arange(cfg.global_dim)] = d_global

    d_local += block_backward(model.enc_block2, adj, tape.enc2, d_feat, grads, "enc2")
    block_backward(model.enc_block1, adj, tape.enc1, d_local, grads, "enc1")
    return grads


def zero_grads(model: GraphNetModel):
    return {name: np.zeros_like(arr) for name, arr in model.parameters()}


# ---------------------------------------------------------------------------
# checkpoints


def save_model(model: GraphNetModel, path) -> None:
    """Binary checkpoint: magic, version, dims header, CRC32, arrays.

    Parameters and then buffers are stored as little-endian float64 in
    declaration order; the CRC covers the header and the payload.
    """
    params = model.parameters()
    buffers = model.buffers()
    header = {
        "config": asdict(model.config),
        "params": [[name, list(arr.shape)] for name, arr in params],
        "buffers": [[name, list(arr.shape)] for name, arr in buffers],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = b"".join(
        np.ascontiguousarray(arr, dtype="<f8").tobytes()
        for _, arr in params + buffers
    )
    crc = zlib.crc32(header_bytes + payload) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(_CHECKPOINT_VERSION.to_bytes(4, "little"))
        fh.write(len(header_bytes).to_bytes(4, "little"))
        fh.write(header_bytes)
        fh.write(crc.to_bytes(4, "little"))
        fh.write(payload)


def load_model(path) -> GraphNetModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != _MAGIC:
        raise CheckpointError(f"{path}: not a model checkpoint")
    version = int.from_bytes(blob[4:8], "little")
    if version != _CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {version}"
        )
    header_len = int.from_bytes(blob[8:12], "little")
    if len(blob) < 12 + header_len + 4:
        raise CheckpointError(f"{path}: truncated checkpoint header")
    header_bytes = blob[12:12 + header_len]
    crc_stored = int.from_bytes(blob[12 + header_len:16 + header_len], "little")
    payload = blob[16 + header_len:]
    if zlib.crc32(header_bytes + payload) & 0xFFFFFFFF != crc_stored:
        raise CheckpointError(f"{path}: checksum mismatch (corrupt or truncated)")
    header = json.loads(header_bytes.decode("utf-8"))
    config = GraphNetConfig(**header["config"])
    model = init_params(config, seed=0)
    for key, declared in (
        ("params", model.parameters()), ("buffers", model.buffers()),
    ):
        expected = {name: tuple(shape) for name, shape in header.get(key, [])}
        actual = {name: arr.shape for name, arr in declared}
        if expected != actual:
            raise CheckpointError(f"{path}: {key} table does not match config")
    offset = 0
    for name, arr in model.parameters() + model.buffers():
        nbytes = arr.size * 8
        chunk = payload[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(f"{path}: truncated parameter payload")
        values = np.frombuffer(chunk, dtype="<f8").reshape(arr.shape)
        arr[...] = values.astype(DTYPE)
        offset += nbytes
    if offset != len(payload):
        raise CheckpointError(f"{path}: trailing bytes in checkpoint")
    if (
        not np.all(np.isfinite(model.aux_shift))
        or not np.all(np.isfinite(model.aux_scale))
        or np.any(model.aux_scale <= 0)
    ):
        raise CheckpointError(f"{path}: invalid aux normalizer")
    return model
