"""Losses, Adam, the learning-rate schedule, and the training loop.

The joint objective is a weighted sum of graph-level cross entropy and
a node-level soft dice loss, both differentiated by hand. Optimization
is Adam with bias correction and a staircase exponential decay of the
learning rate. Everything is deterministic given the seed: shuffling
uses one generator, per-sample gradients are reduced in a fixed order,
and batches average their gradients.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .dtypes import DTYPE
from .errors import ConfigError, DataError, NumericError, StructuralInputError
from .graph import normalize_adjacency
from .nn import GraphNetModel, graphnet_backward, graphnet_forward

__all__ = [
    "LossConfig", "TrainConfig", "OptimizerState", "EpochStats",
    "softmax_cross_entropy", "soft_dice_loss", "joint_loss",
    "init_optimizer", "learning_rate", "adam_step",
    "fit_aux_normalizer", "train", "write_epoch_log", "EPOCH_LOG_HEADER",
]

EPOCH_LOG_HEADER = ("epoch", "lr", "mean_ce", "mean_dsc_loss", "total")


@dataclass(frozen=True)
class LossConfig:
    cls_weight: float = 1.0
    seg_weight: float = 1.0
    dsc_smooth: float = 1.0

    def __post_init__(self):
        if self.cls_weight < 0 or self.seg_weight < 0:
            raise ConfigError("loss weights must be >= 0")
        if self.dsc_smooth <= 0:
            raise ConfigError("dsc_smooth must be > 0")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 100
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")


# ---------------------------------------------------------------------------
# losses


def softmax_cross_entropy(scores, label):
    """Return (-log softmax(scores)[label], softmax(scores) - one_hot)."""
    scores = np.asarray(scores, dtype=DTYPE).reshape(-1)
    label = int(label)
    if not np.all(np.isfinite(scores)):
        raise NumericError("non-finite classification scores")
    if not 0 <= label < scores.shape[0]:
        raise StructuralInputError(
            f"label {label} out of range for {scores.shape[0]} classes"
        )
    shifted = scores - scores.max()
    log_norm = np.log(np.sum(np.exp(shifted)))
    loss = float(log_norm - shifted[label])
    grad = np.exp(shifted - log_norm)
    grad[label] -= 1.0
    return loss, grad


def soft_dice_loss(seg_scores, node_labels, smooth=1.0):
    """Soft dice loss on the foreground class.

    p is the per-node softmax probability of class 1 and g the binary
    ground truth; loss = 1 - (2*sum(p*g) + eps) / (sum(p) + sum(g) + eps).
    Returns the loss and its gradient on the raw N x 2 scores.
    """
    seg_scores = np.asarray(seg_scores, dtype=DTYPE)
    g = np.asarray(node_labels, dtype=DTYPE).reshape(-1)
    if seg_scores.ndim != 2 or seg_scores.shape[1] != 2:
        raise StructuralInputError("soft dice expects N x 2 scores")
    if g.shape[0] != seg_scores.shape[0]:
        raise StructuralInputError("node label count must match score rows")
    if not np.all(np.isfinite(seg_scores)):
        raise NumericError("non-finite segmentation scores")
    if smooth <= 0:
        raise ConfigError("dice smoothing must be > 0")

    shifted = seg_scores - seg_scores.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    probs = expd / expd.sum(axis=1, keepdims=True)
    p = probs[:, 1]
    numer = 2.0 * float(p @ g) + smooth
    denom = float(p.sum() + g.sum()) + smooth
    loss = 1.0 - numer / denom
    # d loss / d p_i, then through the two-class softmax:
    # d p_i / d z_i1 = p_i (1 - p_i), d p_i / d z_i0 = -p_i (1 - p_i).
    d_p = -(2.0 * g * denom - numer) / (denom * denom)
    d_z1 = d_p * probs[:, 1] * probs[:, 0]
    return loss, np.stack([-d_z1, d_z1], axis=1)


def joint_loss(cls_scores, graph_label, seg_scores, node_labels, cfg: LossConfig):
    """Weighted sum of the two losses with matching upstream gradients.

    Returns (total, ce, dsc_loss, d_cls, d_seg).
    """
    ce, d_cls = softmax_cross_entropy(cls_scores, graph_label)
    dsc, d_seg = soft_dice_loss(seg_scores, node_labels, cfg.dsc_smooth)
    total = cfg.cls_weight * ce + cfg.seg_weight * dsc
    return total, ce, dsc, cfg.cls_weight * d_cls, cfg.seg_weight * d_seg


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class OptimizerState:
    """Adam accumulators plus the staircase decay schedule."""

    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    base_lr: float = 0.001
    decay_rate: float = 0.7
    decay_every: int = 20

    def __post_init__(self):
        if self.decay_every < 1:
            raise ConfigError("decay_every must be a positive integer")
        if self.base_lr <= 0 or not 0 < self.decay_rate <= 1:
            raise ConfigError("base_lr must be > 0 and decay_rate in (0, 1]")


def init_optimizer(model: GraphNetModel, **kwargs) -> OptimizerState:
    m = {name: np.zeros_like(arr) for name, arr in model.parameters()}
    v = {name: np.zeros_like(arr) for name, arr in model.parameters()}
    return OptimizerState(m=m, v=v, **kwargs)


def learning_rate(state: OptimizerState, epoch: int) -> float:
    """Staircase decay: base_lr * decay_rate ** (epoch // decay_every)."""
    return state.base_lr * state.decay_rate ** (epoch // state.decay_every)


def adam_step(state: OptimizerState, params, grads, lr: float) -> None:
    """One Adam update, in place on the parameter arrays."""
    state.step += 1
    t = state.step
    bias1 = 1.0 - state.beta1 ** t
    bias2 = 1.0 - state.beta2 ** t
    for name, p in params:
        g = grads[name]
        if g.shape != p.shape:
            raise StructuralInputError(f"gradient shape mismatch for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps)


# ---------------------------------------------------------------------------
# training loop


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    lr: float
    mean_ce: float
    mean_dsc_loss: float
    total: float

    def as_row(self):
        return (
            str(self.epoch),
            format(self.lr, ".17g"),
            format(self.mean_ce, ".17g"),
            format(self.mean_dsc_loss, ".17g"),
            format(self.total, ".17g"),
        )


def write_epoch_log(log, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EPOCH_LOG_HEADER)
        for stats in log:
            writer.writerow(stats.as_row())


def _prepare(dataset, model):
    prepped = []
    for sample in dataset:
        g = sample.graph
        adj = None if model.pointnet_mode else normalize_adjacency(g.adjacency)
        prepped.append((g.node_features, adj, sample.aux,
                        int(sample.graph_label), sample.node_labels))
    return prepped


def fit_aux_normalizer(dataset, model: GraphNetModel) -> None:
    """Point the model's aux normalizer at the training distribution.

    Per-feature mean and standard deviation over the dataset; features
    with (near-)zero spread keep unit scale. Raw measurements span
    several orders of magnitude, and without this the classifier head
    cannot pick the informative ones up within a realistic step budget.
    """
    aux = np.stack([sample.aux for sample in dataset])
    sd = aux.std(axis=0)
    model.aux_shift[...] = aux.mean(axis=0)
    model.aux_scale[...] = np.where(sd > 1e-8, sd, 1.0)


def train(dataset, model: GraphNetModel, cfg: TrainConfig, loss_cfg: LossConfig,
          opt: OptimizerState | None = None, epoch_callback=None):
    """Train the model in place; returns (model, list of EpochStats).

    The auxiliary-feature normalizer is fitted to the dataset first and
    travels with the model. Gradients are averaged within each batch,
    reduced in sample order; the last incomplete batch is kept. A
    non-finite loss aborts with the offending sample's dataset index in
    the message.
    """
    if not dataset:
        raise DataError("training dataset is empty")
    if opt is None:
        opt = init_optimizer(model)
    fit_aux_normalizer(dataset, model)
    prepped = _prepare(dataset, model)
    n = len(prepped)
    rng = np.random.default_rng(cfg.seed)
    log = []

    for epoch in range(cfg.epochs):
        lr = learning_rate(opt, epoch)
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        sum_ce = 0.0
        sum_dsc = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            acc = None
            for idx in batch:
                features, adj, aux, label, node_labels = prepped[idx]
                cls_scores, seg_scores, tape = graphnet_forward(
                    model, features, adj, aux
                )
                total, ce, dsc, d_cls, d_seg = joint_loss(
                    cls_scores, label, seg_scores, node_labels, loss_cfg
                )
                if not np.isfinite(total):
                    raise NumericError(
                        f"non-finite loss at sample {idx} (epoch {epoch})"
                    )
                sum_ce += ce
                sum_dsc += dsc
                grads = graphnet_backward(model, tape, d_cls, d_seg)
                if acc is None:
                    acc = grads
                else:
                    for name in acc:
                        acc[name] += grads[name]
            scale = 1.0 / len(batch)
            for name in acc:
                acc[name] *= scale
            adam_step(opt, model.parameters(), acc, lr)
        mean_ce = sum_ce / n
        mean_dsc = sum_dsc / n
        stats = EpochStats(
            epoch=epoch, lr=lr, mean_ce=mean_ce, mean_dsc_loss=mean_dsc,
            total=loss_cfg.cls_weight * mean_ce + loss_cfg.seg_weight * mean_dsc,
        )
        log.append(stats)
        if epoch_callback is not None:
            epoch_callback(stats)
    return model, log
