"""ROC/AUC with posterior bands, per-class precision/recall/F1 and abstention tables."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .data import BOT, HUMAN, LABEL_NAMES
from .engine import kernels
from .uq import UNCERTAINTY_KINDS, AccountPrediction, as_arrays, decide_array, sigma_of

NA = "N/A"


@dataclass
class RocCurve:
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float
    auc_std: float = 0.0
    fpr_band: np.ndarray | None = None
    tpr_band: np.ndarray | None = None

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["threshold", "fpr", "tpr", "fpr_band", "tpr_band"])
            for i, t in enumerate(self.thresholds):
                fb = repr(float(self.fpr_band[i])) if self.fpr_band is not None else ""
                tb = repr(float(self.tpr_band[i])) if self.tpr_band is not None else ""
                w.writerow([repr(float(t)), repr(float(self.fpr[i])), repr(float(self.tpr[i])), fb, tb])


def _check_labels(labels: np.ndarray) -> tuple[int, int]:
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos + n_neg != labels.size:
        raise ValueError("labels must be 0/1")
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both classes present")
    return n_pos, n_neg


def roc_auc(scores, labels) -> RocCurve:
    """Sweep thresholds over the unique scores (descending); trapezoidal AUC.

    The first point (threshold +inf) is (0, 0).  Tied scores move along a
    diagonal segment, which is the half-credit Mann-Whitney convention.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n_pos, n_neg = _check_labels(labels)
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    tp = np.cumsum(y == 1)
    fp = np.cumsum(y == 0)
    last = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tpr = np.r_[0.0, tp[last] / n_pos]
    fpr = np.r_[0.0, fp[last] / n_neg]
    thresholds = np.r_[np.inf, s[last]]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(thresholds, fpr, tpr, auc)


def mann_whitney_auc(scores: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """AUC of each column of ``scores`` (accounts x samples) via average ranks."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim == 1:
        scores = scores[:, None]
    labels = np.asarray(labels, dtype=np.int64)
    n_pos, n_neg = _check_labels(labels)
    ranks = stats.rankdata(scores, axis=0)
    r_pos = ranks[labels == 1].sum(axis=0)
    return (r_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def roc_band(posterior_scores, labels, n_sigma: float = 5.0) -> RocCurve:
    """Per-draw ROC curves on a shared grid; bands are n_sigma x std.

    The grid is the unique mean scores bracketed by +inf and -inf, so every
    per-draw curve starts at (0, 0) and ends at (1, 1).
    """
    S = np.asarray(posterior_scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if S.ndim != 2 or S.shape[1] < 2:
        raise ValueError("roc_band needs an (accounts, samples) matrix with at least 2 samples")
    n_pos, n_neg = _check_labels(labels)
    grid = np.r_[np.inf, np.unique(S.mean(axis=1))[::-1], -np.inf]
    tp, fp = kernels.roc_counts(S, labels, grid)
    tpr = tp / n_pos
    fpr = fp / n_neg
    aucs = mann_whitney_auc(S, labels)
    return RocCurve(
        thresholds=grid,
        fpr=fpr.mean(axis=1),
        tpr=tpr.mean(axis=1),
        auc=float(aucs.mean()),
        auc_std=float(aucs.std()),
        fpr_band=n_sigma * fpr.std(axis=1),
        tpr_band=n_sigma * tpr.std(axis=1),
    )


# ---- precision / recall / F1 ------------------------------------------------

@dataclass
class ClassMetrics:
    """``None`` marks an undefined value (zero denominator or single-class pool)."""

    precision: float | None
    recall: float | None
    f1: float | None
    precision_std: float | None = None
    recall_std: float | None = None
    f1_std: float | None = None
    support: int = 0


def _rate(num: int, den: int) -> tuple[float | None, float | None]:
    if den == 0:
        return None, None
    p = num / den
    return p, math.sqrt(p * (1.0 - p) / den)


def prf1(decisions, labels, positive_class: int) -> ClassMetrics:
    """Precision/recall/F1 for one class, binomial std on each rate.

    ``decisions`` must already exclude abstentions.  When ``labels`` hold a
    single class (e.g. the excess-human pool) no false positive is possible,
    so precision and F1 are reported undefined; recall stays defined for the
    class that is present.
    """
    d = np.asarray(decisions, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)
    if d.shape != y.shape:
        raise ValueError("decisions and labels differ in length")
    tp = int(np.sum((d == positive_class) & (y == positive_class)))
    fp = int(np.sum((d == positive_class) & (y != positive_class)))
    fn = int(np.sum((d != positive_class) & (y == positive_class)))
    recall, recall_std = _rate(tp, tp + fn)
    if np.unique(y).size < 2:
        return ClassMetrics(None, recall, None, None, recall_std, None, tp + fn)
    precision, precision_std = _rate(tp, tp + fp)
    f1 = f1_std = None
    if precision is not None and recall is not None:
        if precision + recall == 0:
            f1, f1_std = 0.0, 0.0
        else:
            f1 = 2.0 * precision * recall / (precision + recall)
            dp = 2.0 * recall**2 / (precision + recall) ** 2
            dr = 2.0 * precision**2 / (precision + recall) ** 2
            f1_std = math.sqrt((dp * precision_std) ** 2 + (dr * recall_std) ** 2)
    return ClassMetrics(precision, recall, f1, precision_std, recall_std, f1_std, tp + fn)


@dataclass
class MetricsTable:
    subset_tag: str
    kind: str
    accuracy: float | None
    accuracy_std: float | None
    per_class: dict[str, ClassMetrics]
    rejection_percent: dict[str, float | None]
    n_total: int
    n_retained: int
    k_sigma: float | None = None

    @property
    def empty_retained(self) -> bool:
        return self.n_retained == 0

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["empty_retained"] = self.empty_retained
        return d

    def rows(self) -> list[dict]:
        out = []
        for cls, m in self.per_class.items():
            out.append({
                "subset": self.subset_tag, "uncertainty": self.kind, "class": cls,
                "precision": m.precision, "precision_std": m.precision_std,
                "recall": m.recall, "recall_std": m.recall_std,
                "f1": m.f1, "f1_std": m.f1_std,
                "rejection_percent": self.rejection_percent.get(cls),
                "accuracy": self.accuracy, "accuracy_std": self.accuracy_std,
                "n_total": self.n_total, "n_retained": self.n_retained,
            })
        return out


TABLE_COLUMNS = ["subset", "uncertainty", "class", "precision", "precision_std", "recall", "recall_std", "f1",
                 "f1_std", "rejection_percent", "accuracy", "accuracy_std", "n_total", "n_retained"]


def metrics_table(codes, labels, subset_tag: str = "test", kind: str = "none", k: float | None = None) -> MetricsTable:
    """Table from decision codes (1 bot, 0 human, -1 abstain) and true labels."""
    codes = np.asarray(codes, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)
    keep = codes >= 0
    d, yk = codes[keep], y[keep]
    n_ret = int(keep.sum())
    if n_ret:
        acc, acc_std = _rate(int(np.sum(d == yk)), n_ret)
    else:
        acc = acc_std = None
    per_class, rejection = {}, {}
    for cls in (HUMAN, BOT):
        name = LABEL_NAMES[cls]
        per_class[name] = prf1(d, yk, cls) if n_ret else ClassMetrics(None, None, None)
        in_cls = y == cls
        rejection[name] = 100.0 * float(np.sum(~keep & in_cls)) / int(in_cls.sum()) if in_cls.any() else None
    return MetricsTable(subset_tag, kind, acc, acc_std, per_class, rejection, int(y.size), n_ret, k)


def abstention_report(
    preds: Sequence[AccountPrediction],
    labels,
    kinds: Sequence[str] = UNCERTAINTY_KINDS,
    k: float = 3.0,
    subset_tag: str = "test",
) -> dict[str, MetricsTable]:
    """One MetricsTable per uncertainty kind ('none' is the plain 0.5 threshold)."""
    p = as_arrays(preds)["p_mean"]
    out = {}
    for kind in kinds:
        codes = decide_array(p, sigma_of(preds, kind), k)
        out[kind] = metrics_table(codes, labels, subset_tag, kind, None if kind == "none" else k)
    return out


def _fmt(v) -> str:
    if v is None:
        return NA
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_tables_csv(tables: Sequence[MetricsTable], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TABLE_COLUMNS)
        for t in tables:
            for row in t.rows():
                w.writerow([_fmt(row[c]) for c in TABLE_COLUMNS])


def write_tables_json(tables: Sequence[MetricsTable], path, extra: dict | None = None) -> None:
    doc = {"tables": [t.to_dict() for t in tables]}
    if extra:
        doc.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
