"""Evaluation: accuracy, ROC/AUC, Youden operating point, node DSC.

The ROC curve is built by sweeping every distinct score as a decision
threshold (predict positive when score >= threshold), with explicit
+inf and -inf boundary points so the curve always spans sensitivity 0
through 1. AUC is the trapezoidal area over (1 - specificity,
sensitivity), which equals the Mann-Whitney pair statistic with ties
counted as half.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass

import numpy as np

from .dtypes import DTYPE
from .errors import DataError, StructuralInputError
from .graph import normalize_adjacency
from .nn import GraphNetModel, graphnet_forward

__all__ = [
    "RocCurve", "OperatingPoint", "EvalReport",
    "roc_auc", "youden_point", "node_dsc", "evaluate",
    "report_to_dict", "write_report", "write_roc_csv",
    "REPORT_SCHEMA_VERSION", "ROC_CSV_HEADER",
]

REPORT_SCHEMA_VERSION = 1
ROC_CSV_HEADER = ("threshold", "sensitivity", "specificity")


@dataclass(frozen=True)
class RocCurve:
    """(threshold, sensitivity, specificity) points, descending threshold."""

    points: tuple
    auc: float
    n_pos: int
    n_neg: int


@dataclass(frozen=True)
class OperatingPoint:
    threshold: float
    sensitivity: float
    specificity: float
    accuracy: float


@dataclass(frozen=True)
class EvalReport:
    accuracy: float  # at probability threshold 0.5
    roc: RocCurve
    operating_point: OperatingPoint
    mean_node_dsc: float
    node_dsc_per_sample: tuple
    mean_latency_ms: float
    num_samples: int


def roc_auc(scores, labels) -> RocCurve:
    """ROC curve and AUC from real scores and binary labels."""
    scores = np.asarray(scores, dtype=DTYPE).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise StructuralInputError("scores and labels must have equal length")
    if not np.all(np.isfinite(scores)):
        raise DataError("non-finite scores")
    if not np.all((labels == 0) | (labels == 1)):
        raise DataError("labels must be binary")
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise DataError("ROC needs both classes present")

    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    cum_tp = np.cumsum(sorted_labels == 1)
    cum_fp = np.cumsum(sorted_labels == 0)
    # last index of each run of equal scores = counts with score >= that value
    distinct_mask = np.ones(len(sorted_scores), dtype=bool)
    distinct_mask[:-1] = sorted_scores[:-1] != sorted_scores[1:]
    idx = np.nonzero(distinct_mask)[0]

    points = [(np.inf, 0.0, 1.0)]
    for i in idx:
        sens = cum_tp[i] / n_pos
        spec = 1.0 - cum_fp[i] / n_neg
        points.append((float(sorted_scores[i]), float(sens), float(spec)))
    points.append((-np.inf, 1.0, 0.0))

    auc = 0.0
    for (_, s0, sp0), (_, s1, sp1) in zip(points, points[1:]):
        x0, x1 = 1.0 - sp0, 1.0 - sp1
        auc += (x1 - x0) * (s0 + s1) / 2.0
    return RocCurve(points=tuple(points), auc=float(auc),
                    n_pos=n_pos, n_neg=n_neg)


def youden_point(curve: RocCurve) -> OperatingPoint:
    """Curve point maximizing J = sensitivity + specificity - 1.

    Ties are broken toward higher specificity, then toward the larger
    threshold (points are scanned in descending-threshold order).
    Accuracy is the weighted mean of sensitivity and specificity under
    the curve's class counts.
    """
    if not curve.points:
        raise StructuralInputError("empty ROC curve")
    best = None
    for t, sens, spec in curve.points:
        j = sens + spec - 1.0
        key = (j, spec)
        if best is None or key > best[0]:
            best = (key, t, sens, spec)
    _, t, sens, spec = best
    total = curve.n_pos + curve.n_neg
    acc = (sens * curve.n_pos + spec * curve.n_neg) / total
    return OperatingPoint(threshold=t, sensitivity=sens, specificity=spec,
                          accuracy=float(acc))


def node_dsc(pred_labels, true_labels) -> float:
    """Dice overlap of the two binary masks; both empty counts as 1.0."""
    pred = np.asarray(pred_labels).reshape(-1)
    true = np.asarray(true_labels).reshape(-1)
    if pred.shape != true.shape:
        raise StructuralInputError("mask lengths differ")
    if not np.all((pred == 0) | (pred == 1)) or not np.all(
        (true == 0) | (true == 1)
    ):
        raise DataError("masks must be binary")
    p = int(np.sum(pred == 1))
    g = int(np.sum(true == 1))
    if p + g == 0:
        return 1.0
    inter = int(np.sum((pred == 1) & (true == 1)))
    return 2.0 * inter / (p + g)


def _softmax(scores):
    shifted = scores - scores.max()
    e = np.exp(shifted)
    return e / e.sum()


def evaluate(model: GraphNetModel, samples) -> EvalReport:
    """Run the model over a labeled test set and aggregate metrics.

    Classification scores are softmax class-1 probabilities; node
    predictions are per-node argmax. Latency is the wall-clock mean of
    the forward pass alone (adjacency normalization excluded, since it
    is a per-mesh preprocessing step).
    """
    if not samples:
        raise DataError("evaluation set is empty")
    scores = []
    labels = []
    dscs = []
    elapsed = 0.0
    for sample in samples:
        g = sample.graph
        adj = None if model.pointnet_mode else normalize_adjacency(g.adjacency)
        t0 = time.perf_counter()
        cls_scores, seg_scores, _ = graphnet_forward(
            model, g.node_features, adj, sample.aux
        )
        elapsed += time.perf_counter() - t0
        scores.append(float(_softmax(cls_scores)[1]))
        labels.append(int(sample.graph_label))
        pred_nodes = np.argmax(seg_scores, axis=1)
        dscs.append(node_dsc(pred_nodes, sample.node_labels))

    scores = np.array(scores, dtype=DTYPE)
    labels = np.array(labels)
    pred = (scores >= 0.5).astype(int)
    accuracy = float(np.mean(pred == labels))
    curve = roc_auc(scores, labels)
    op = youden_point(curve)
    return EvalReport(
        accuracy=accuracy,
        roc=curve,
        operating_point=op,
        mean_node_dsc=float(np.mean(dscs)),
        node_dsc_per_sample=tuple(dscs),
        mean_latency_ms=elapsed / len(samples) * 1000.0,
        num_samples=len(samples),
    )


def report_to_dict(report: EvalReport) -> dict:
    """JSON-ready dict. `mean_latency_ms` is the only wall-clock field;
    everything else is a pure function of model and data."""
    op = report.operating_point
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "num_samples": report.num_samples,
        "n_pos": report.roc.n_pos,
        "n_neg": report.roc.n_neg,
        "accuracy": report.accuracy,
        "auc": report.roc.auc,
        "operating_point": {
            "threshold": op.threshold,
            "sensitivity": op.sensitivity,
            "specificity": op.specificity,
            "accuracy": op.accuracy,
        },
        "mean_node_dsc": report.mean_node_dsc,
        "node_dsc_per_sample": list(report.node_dsc_per_sample),
        "mean_latency_ms": report.mean_latency_ms,
    }


def write_report(report: EvalReport, json_path, roc_csv_path=None) -> None:
    with open(json_path, "w") as fh:
        json.dump(report_to_dict(report), fh, indent=2)
        fh.write("\n")
    if roc_csv_path is not None:
        write_roc_csv(report.roc, roc_csv_path)


def write_roc_csv(curve: RocCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ROC_CSV_HEADER)
        for t, sens, spec in curve.points:
            writer.writerow((
                format(t, ".17g"), format(sens, ".17g"), format(spec, ".17g"),
            ))
