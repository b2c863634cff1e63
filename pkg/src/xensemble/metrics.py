"""Binary classification metrics: confusion counts, precision/recall/F1, ROC and AUC."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int
    positive: int = 1

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RocCurve:
    thresholds: np.ndarray  # +inf first, -inf last
    fpr: np.ndarray
    tpr: np.ndarray

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))

    def to_csv(self) -> str:
        rows = ["threshold,fpr,tpr"]
        for t, f, p in zip(self.thresholds, self.fpr, self.tpr):
            rows.append(f"{_fmt(t)},{_fmt(f)},{_fmt(p)}")
        return "\n".join(rows) + "\n"


def _fmt(x: float) -> str:
    if np.isposinf(x):
        return "inf"
    if np.isneginf(x):
        return "-inf"
    return repr(float(x))


def confusion(pred_labels, true_labels, positive: int = 1) -> ConfusionMatrix:
    p = np.asarray(pred_labels).ravel()
    t = np.asarray(true_labels).ravel()
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.size} predictions vs {t.size} labels")
    for name, arr in (("predicted", p), ("true", t)):
        if not np.isin(arr, (0, 1)).all():
            raise ValueError(f"{name} labels must be binary")
    pp, tp_ = p == positive, t == positive
    return ConfusionMatrix(
        tp=int(np.sum(pp & tp_)),
        fp=int(np.sum(pp & ~tp_)),
        tn=int(np.sum(~pp & ~tp_)),
        fn=int(np.sum(~pp & tp_)),
        positive=positive,
    )


def prf1_accuracy(cm: ConfusionMatrix) -> dict:
    """Precision, recall, F1 and accuracy; any 0/0 becomes 0 and is listed in ``degenerate``."""
    degenerate = []

    def ratio(num, den, name):
        if den == 0:
            degenerate.append(name)
            return 0.0
        return num / den

    precision = ratio(cm.tp, cm.tp + cm.fp, "precision")
    recall = ratio(cm.tp, cm.tp + cm.fn, "recall")
    f1 = ratio(2 * precision * recall, precision + recall, "f1")
    accuracy = ratio(cm.tp + cm.tn, cm.total, "accuracy")
    return {"precision": precision, "recall": recall, "f1": f1, "accuracy": accuracy, "degenerate": degenerate}


def roc_curve(scores, labels, positive: int = 1) -> RocCurve:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel() == positive
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs at least one positive and one negative sample")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    # last index of each group of tied scores
    ends = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tps = np.cumsum(y)[ends]
    fps = (ends + 1) - tps
    thr = np.r_[np.inf, s[ends], -np.inf]
    tpr = np.r_[0.0, tps / n_pos, 1.0]
    fpr = np.r_[0.0, fps / n_neg, 1.0]
    return RocCurve(thr, fpr, tpr)


def auc_trapezoid(curve: RocCurve) -> float:
    return float(np.sum(np.diff(curve.fpr) * (curve.tpr[1:] + curve.tpr[:-1]) / 2.0))


def roc_auc(scores, labels, positive: int = 1) -> tuple[RocCurve, float]:
    curve = roc_curve(scores, labels, positive)
    return curve, auc_trapezoid(curve)


def metrics_report(rows: list[dict]) -> str:
    return json.dumps(rows, indent=2) + "\n"
