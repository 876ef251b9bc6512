"""Confusion counts, threshold metrics, ROC-AUC and PR-AUC."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

METRICS = ("accuracy", "precision", "recall", "f1", "auc", "pr_auc", "jaccard")


@dataclass(frozen=True)
class EvalReport:
    tp: int
    fp: int
    tn: int
    fn: int
    accuracy: float
    precision: float
    recall: float
    f1: float
    auc: float
    pr_auc: float
    jaccard: float
    precision_undefined: bool = False

    def as_dict(self) -> dict:
        return asdict(self)


def _ratio(a, b):
    return a / b if b else 0.0


def from_counts(tp, fp, tn, fn, auc=float("nan"), pr_auc=float("nan")) -> EvalReport:
    prec = _ratio(tp, tp + fp)
    rec = _ratio(tp, tp + fn)
    return EvalReport(
        int(tp), int(fp), int(tn), int(fn),
        accuracy=_ratio(tp + tn, tp + fp + tn + fn),
        precision=prec,
        recall=rec,
        f1=_ratio(2 * tp, 2 * tp + fp + fn),
        auc=auc,
        pr_auc=pr_auc,
        jaccard=_ratio(tp, tp + fp + fn),
        precision_undefined=(tp + fp) == 0,
    )


def _curve_counts(scores, labels):
    """Cumulative TP/FP at each distinct threshold, highest score first."""
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    last = np.r_[np.flatnonzero(s[1:] != s[:-1]), len(s) - 1]
    tps = np.cumsum(y)[last]
    fps = (last + 1) - tps
    return tps.astype(float), fps.astype(float)


def roc_auc(scores, labels) -> float:
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    pos = labels.sum()
    neg = len(labels) - pos
    if pos == 0 or neg == 0:
        return float("nan")
    tps, fps = _curve_counts(scores, labels)
    tpr = np.r_[0.0, tps / pos]
    fpr = np.r_[0.0, fps / neg]
    return float(np.trapezoid(tpr, fpr))


def pr_auc(scores, labels) -> float:
    """Trapezoidal area under precision-recall, starting at (recall 0, precision 1)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    pos = labels.sum()
    if pos == 0:
        return float("nan")
    tps, fps = _curve_counts(scores, labels)
    prec = np.r_[1.0, tps / (tps + fps)]
    rec = np.r_[0.0, tps / pos]
    return float(np.trapezoid(prec, rec))


def evaluate(scores, labels, pred=None, threshold=0.5) -> EvalReport:
    """Metrics for scores against binary labels.

    ``pred`` overrides the ``score >= threshold`` labelling (used for KNN ties).
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.size == 0:
        raise ValueError("empty input")
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0/1")
    labels = labels.astype(int)
    pred = (scores >= threshold).astype(int) if pred is None else np.asarray(pred, dtype=int)
    tp = int(((pred == 1) & (labels == 1)).sum())
    fp = int(((pred == 1) & (labels == 0)).sum())
    tn = int(((pred == 0) & (labels == 0)).sum())
    fn = int(((pred == 0) & (labels == 1)).sum())
    return from_counts(tp, fp, tn, fn, roc_auc(scores, labels), pr_auc(scores, labels))
