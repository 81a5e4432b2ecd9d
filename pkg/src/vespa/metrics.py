"""Label-based and example-based multi-label metrics, mAP and view accuracy."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

THRESHOLD = 0.5


class MetricError(ValueError):
    pass


def _mean(values) -> float:
    """Correctly rounded mean, independent of summation order (and sharding)."""
    values = np.asarray(values, dtype=np.float64).ravel()
    return math.fsum(values.tolist()) / len(values)


def binarize(scores, threshold: float = THRESHOLD) -> np.ndarray:
    return np.asarray(scores) >= threshold


def _as_bool(a) -> np.ndarray:
    return np.asarray(a).astype(bool)


def attribute_accuracies(pred, labels) -> tuple[np.ndarray, np.ndarray]:
    """Per-attribute (TPR + TNR) / 2 and a mask of attributes where it is defined."""
    pred, labels = _as_bool(pred), _as_bool(labels)
    pos = labels.sum(axis=0)
    neg = (~labels).sum(axis=0)
    tp = (pred & labels).sum(axis=0)
    tn = (~pred & ~labels).sum(axis=0)
    ok = (pos > 0) & (neg > 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        acc = (tp / pos + tn / neg) / 2.0
    return np.where(ok, acc, np.nan), ok


def mean_accuracy(pred, labels) -> float:
    """mA over attributes that have both positive and negative test labels."""
    acc, ok = attribute_accuracies(pred, labels)
    if not ok.any():
        raise MetricError("no attribute has both positive and negative labels")
    return _mean(acc[ok])


def example_based(pred, labels) -> tuple[float, float, float, float]:
    """Mean per-example accuracy, precision, recall and F1.

    Empty true and predicted sets count as a perfect example; if only one
    side is empty the undefined ratios are 0.
    """
    pred, labels = _as_bool(pred), _as_bool(labels)
    inter = (pred & labels).sum(axis=1).astype(np.float64)
    union = (pred | labels).sum(axis=1).astype(np.float64)
    n_pred = pred.sum(axis=1).astype(np.float64)
    n_true = labels.sum(axis=1).astype(np.float64)
    both_empty = union == 0

    def ratio(num, den):
        out = np.zeros_like(num)
        np.divide(num, den, out=out, where=den > 0)
        return out

    acc = np.where(both_empty, 1.0, ratio(inter, union))
    prec = np.where(both_empty, 1.0, ratio(inter, n_pred))
    rec = np.where(both_empty, 1.0, ratio(inter, n_true))
    f1 = np.where(both_empty, 1.0, ratio(2 * prec * rec, prec + rec))
    if len(acc) == 0:
        raise MetricError("empty batch")
    return _mean(acc), _mean(prec), _mean(rec), _mean(f1)


def average_precision(scores, labels) -> float:
    """Mean precision@k over the ranks k of the positives (no interpolation).

    Ranks by descending score; ties keep the original index order.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = _as_bool(labels)
    if not labels.any():
        raise MetricError("average precision needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    hits = labels[order]
    ranks = np.flatnonzero(hits) + 1
    return _mean(np.arange(1, len(ranks) + 1) / ranks)


def mean_average_precision(scores, labels) -> tuple[float, np.ndarray]:
    """mAP over attributes with at least one positive; also returns the included mask."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = _as_bool(labels)
    ok = labels.any(axis=0)
    if not ok.any():
        raise MetricError("no attribute has a positive label")
    aps = [average_precision(scores[:, c], labels[:, c]) for c in np.flatnonzero(ok)]
    return _mean(aps), ok


def view_confusion(view_true, view_pred, view_count: int) -> np.ndarray:
    """Counts with rows = true view, columns = predicted view."""
    t = np.asarray(view_true, dtype=np.int64)
    p = np.asarray(view_pred, dtype=np.int64)
    if t.shape != p.shape:
        raise MetricError(f"view arrays differ in shape: {t.shape} vs {p.shape}")
    conf = np.zeros((view_count, view_count), dtype=np.int64)
    np.add.at(conf, (t, p), 1)
    return conf


def view_accuracy(view_true, view_pred, view_count: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-view recall (NaN where a view has no samples) and the confusion matrix."""
    if view_true is None:
        raise MetricError("ground-truth views are required for view accuracy")
    t = np.asarray(view_true, dtype=np.int64)
    known = t >= 0
    if not known.any():
        raise MetricError("no ground-truth view labels present")
    conf = view_confusion(t[known], np.asarray(view_pred)[known], view_count)
    support = conf.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        acc = np.where(support > 0, np.diag(conf) / np.maximum(support, 1), np.nan)
    return acc, conf


@dataclass
class PredictionBatch:
    scores: np.ndarray
    labels: np.ndarray
    view_pred: np.ndarray | None = None
    view_true: np.ndarray | None = None
    threshold: float = THRESHOLD

    @property
    def binarized(self) -> np.ndarray:
        return binarize(self.scores, self.threshold)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = _as_bool(self.labels)
        if self.scores.shape != self.labels.shape:
            raise MetricError(f"scores {self.scores.shape} vs labels {self.labels.shape}")


@dataclass
class MetricsReport:
    mA: float
    example_accuracy: float
    example_precision: float
    example_recall: float
    example_f1: float
    mAP: float
    per_view_accuracy: np.ndarray | None = None
    view_confusion: np.ndarray | None = None
    excluded_mA: list[int] = field(default_factory=list)
    excluded_mAP: list[int] = field(default_factory=list)

    def records(self) -> list[tuple[str, str]]:
        """Flat (key, value) pairs; floats use round-trip repr."""
        out = [
            ("mA", repr(self.mA)),
            ("example_accuracy", repr(self.example_accuracy)),
            ("example_precision", repr(self.example_precision)),
            ("example_recall", repr(self.example_recall)),
            ("example_f1", repr(self.example_f1)),
            ("mAP", repr(self.mAP)),
            ("excluded_mA", ",".join(map(str, self.excluded_mA)) or "none"),
            ("excluded_mAP", ",".join(map(str, self.excluded_mAP)) or "none"),
        ]
        if self.per_view_accuracy is not None:
            for v, a in enumerate(self.per_view_accuracy):
                out.append((f"view_accuracy.{v}", repr(float(a))))
            for v, row in enumerate(self.view_confusion):
                out.append((f"view_confusion.{v}", ",".join(str(int(c)) for c in row)))
        return out


def evaluate(batch: PredictionBatch, view_count: int = 3) -> MetricsReport:
    pred = batch.binarized
    acc, ok = attribute_accuracies(pred, batch.labels)
    if not ok.any():
        raise MetricError("no attribute has both positive and negative labels")
    excluded = [int(c) for c in np.flatnonzero(~ok)]
    if excluded:
        warnings.warn(f"attributes {excluded} excluded from mA (single-valued in this split)")
    e_acc, e_prec, e_rec, e_f1 = example_based(pred, batch.labels)
    m_ap, ap_ok = mean_average_precision(batch.scores, batch.labels)
    report = MetricsReport(
        mA=_mean(acc[ok]),
        example_accuracy=e_acc,
        example_precision=e_prec,
        example_recall=e_rec,
        example_f1=e_f1,
        mAP=m_ap,
        excluded_mA=excluded,
        excluded_mAP=[int(c) for c in np.flatnonzero(~ap_ok)],
    )
    if batch.view_true is not None and batch.view_pred is not None and np.any(np.asarray(batch.view_true) >= 0):
        report.per_view_accuracy, report.view_confusion = view_accuracy(batch.view_true, batch.view_pred, view_count)
    return report


def format_table(report: MetricsReport, view_names=("front", "back", "side")) -> str:
    cols = ["mA", "Acc", "Prec", "Rec", "F1", "mAP"]
    vals = [
        report.mA,
        report.example_accuracy,
        report.example_precision,
        report.example_recall,
        report.example_f1,
        report.mAP,
    ]
    lines = [
        "| " + " | ".join(f"{c:>6}" for c in cols) + " |",
        "|" + "|".join("-" * 8 for _ in cols) + "|",
        "| " + " | ".join(f"{100 * v:6.2f}" for v in vals) + " |",
    ]
    if report.per_view_accuracy is not None:
        lines.append("")
        lines.append("view accuracy: " + ", ".join(
            f"{view_names[v] if v < len(view_names) else v}={100 * a:.2f}"
            for v, a in enumerate(report.per_view_accuracy)
        ))
    else:
        lines.append("")
        lines.append("view accuracy: not reported (no ground-truth view labels)")
    return "\n".join(lines) + "\n"
