"""Confusion matrices, one-vs-rest rates, ROC/AUC and confidence intervals."""
from __future__ import annotations

import io
import json
import math
import warnings
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Optional

import numpy as np

from .data.manifest import CLASS_NAMES
from .tensor import Rng

RATE_NAMES = ("sensitivity", "specificity", "accuracy", "ppv", "f1")


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows = true class, columns = predicted class

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def one_vs_rest(self, c: int):
        """``(TP, FP, FN, TN)`` for class ``c`` against all others."""
        m = self.counts
        tp = int(m[c, c])
        fp = int(m[:, c].sum()) - tp
        fn = int(m[c, :].sum()) - tp
        return tp, fp, fn, self.total - tp - fp - fn


def confusion(true_labels, predicted_labels, n_classes=len(CLASS_NAMES)) -> ConfusionMatrix:
    t = np.asarray(true_labels, dtype=np.int64)
    p = np.asarray(predicted_labels, dtype=np.int64)
    if t.shape != p.shape:
        raise ValueError(f"{t.size} true labels but {p.size} predictions")
    if t.size and (min(t.min(), p.min()) < 0 or max(t.max(), p.max()) >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    return ConfusionMatrix(counts)


def _ratio(num, den):
    return None if den == 0 else num / den


def rates(tp, fp, fn, tn) -> dict:
    """Accuracy, PPV, sensitivity, specificity and F1 from one-vs-rest counts.

    A zero denominator yields ``None`` (undefined) instead of 0.
    """
    return {
        "sensitivity": _ratio(tp, tp + fn),
        "specificity": _ratio(tn, tn + fp),
        "accuracy": _ratio(tp + tn, tp + tn + fp + fn),
        "ppv": _ratio(tp, tp + fp),
        "f1": _ratio(2 * tp, 2 * tp + fp + fn),
    }


def _macro(values, name):
    defined = [v for v in values if v is not None]
    if len(defined) < len(values):
        warnings.warn(f"{name} undefined for {len(values) - len(defined)} class(es); excluded from the macro mean")
    return sum(defined) / len(defined) if defined else None


def error_ci(error_rate, n, confidence=0.95) -> float:
    """Half-width of the normal-approximation binomial interval for an error rate."""
    if not 0.0 <= error_rate <= 1.0:
        raise ValueError("error rate must lie in [0, 1]")
    if n < 1:
        raise ValueError("n must be >= 1")
    z = NormalDist().inv_cdf(0.5 + confidence / 2.0)
    return z * math.sqrt(error_rate * (1.0 - error_rate) / n)


def roc_curve(is_positive, scores):
    """One-vs-rest ROC sweeping thresholds over the distinct scores (descending).

    Returns ``(fpr, tpr, thresholds, auc)``; the first point is (0, 0). The
    area is accumulated on integer counts, so tied scores contribute exactly
    one half per positive/negative pair.
    """
    pos = np.asarray(is_positive, dtype=bool)
    s = np.asarray(scores, dtype=np.float64)
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both positive and negative samples")
    order = np.argsort(-s, kind="mergesort")
    s, pos = s[order], pos[order]
    distinct = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tp = np.r_[0, np.cumsum(pos)[distinct]]
    fp = np.r_[0, np.cumsum(~pos)[distinct]]
    twice_area = int(np.sum(np.diff(fp) * (tp[1:] + tp[:-1])))
    auc = twice_area / (2 * n_pos * n_neg)
    return fp / n_neg, tp / n_pos, np.r_[np.inf, s[distinct]], auc


def roc_auc(true_labels, class_scores) -> dict:
    """Per-class ROC points and AUC plus the macro AUC."""
    y = np.asarray(true_labels, dtype=np.int64)
    S = np.asarray(class_scores, dtype=np.float64)
    if not np.all(np.isfinite(S)):
        raise ValueError("scores must be finite")
    curves, aucs = [], []
    for c in range(S.shape[1]):
        if not np.any(y == c):
            raise ValueError(f"class {c} is absent from the true labels")
        fpr, tpr, thr, auc = roc_curve(y == c, S[:, c])
        curves.append({"fpr": fpr, "tpr": tpr, "thresholds": thr})
        aucs.append(auc)
    return {"curves": curves, "auc": aucs, "macro_auc": float(np.mean(aucs))}


def macro_auc(true_labels, class_scores) -> float:
    return roc_auc(true_labels, class_scores)["macro_auc"]


def auc_ci(true_labels, class_scores, resamples=1000, seed=0, confidence=0.95) -> float:
    """Bootstrap half-width of the macro AUC (percentile method, class-stratified).

    A resample that lacks a class is redrawn, up to ``10 * resamples`` redraws.
    """
    if resamples < 100:
        raise ValueError("use at least 100 bootstrap resamples")
    y = np.asarray(true_labels, dtype=np.int64)
    S = np.asarray(class_scores, dtype=np.float64)
    n_classes = S.shape[1]
    strata = [np.flatnonzero(y == c) for c in range(n_classes)]
    rng = Rng(seed)
    stats, redraws = [], 0
    while len(stats) < resamples:
        idx = np.concatenate([s[rng.integers(0, len(s), len(s))] for s in strata if len(s)])
        yb = y[idx]
        if len(np.unique(yb)) < n_classes or any(np.all(yb == c) for c in range(n_classes)):
            redraws += 1
            if redraws > 10 * resamples:
                raise RuntimeError("too many degenerate bootstrap resamples")
            continue
        stats.append(macro_auc(yb, S[idx]))
    tail = (1.0 - confidence) / 2.0
    lo, hi = np.percentile(stats, [100 * tail, 100 * (1 - tail)])
    return float((hi - lo) / 2.0)


def hanley_mcneil_se(auc, n_pos, n_neg) -> float:
    q1 = auc / (2.0 - auc)
    q2 = 2.0 * auc * auc / (1.0 + auc)
    var = (auc * (1 - auc) + (n_pos - 1) * (q1 - auc * auc) + (n_neg - 1) * (q2 - auc * auc)) / (n_pos * n_neg)
    return math.sqrt(max(var, 0.0))


@dataclass
class MetricsReport:
    confusion: ConfusionMatrix
    per_class: list                   # one rates() dict per class
    macro: dict
    accuracy_overall: float
    error: float
    error_ci: float
    auc: Optional[list] = None
    macro_auc: Optional[float] = None
    macro_auc_ci: Optional[float] = None
    roc: Optional[list] = None
    class_names: tuple = CLASS_NAMES
    meta: dict = field(default_factory=dict)

    def headline(self) -> dict:
        """Flat row of the table-style numbers (macro rates, overall accuracy, AUC)."""
        row = {"sensitivity": self.macro["sensitivity"], "specificity": self.macro["specificity"],
               "accuracy_overall": self.accuracy_overall, "accuracy_ovr_macro": self.macro["accuracy"],
               "error": self.error, "error_ci": self.error_ci, "ppv": self.macro["ppv"], "f1": self.macro["f1"]}
        if self.macro_auc is not None:
            row["auc"] = self.macro_auc
            row["auc_ci"] = self.macro_auc_ci
        return row

    def to_dict(self) -> dict:
        d = {
            "meta": self.meta,
            "classes": list(self.class_names),
            "samples": self.confusion.total,
            "confusion_matrix": self.confusion.counts.tolist(),
            "accuracy_overall": self.accuracy_overall,
            "error": self.error,
            "error_ci": self.error_ci,
            "macro": {("accuracy_ovr_macro" if k == "accuracy" else k): v for k, v in self.macro.items()},
            "per_class": {
                name: dict(zip(("tp", "fp", "fn", "tn"), self.confusion.one_vs_rest(c))) | self.per_class[c]
                for c, name in enumerate(self.class_names)
            },
        }
        if self.auc is not None:
            d["macro"]["auc"] = self.macro_auc
            d["macro"]["auc_ci"] = self.macro_auc_ci
            for c, name in enumerate(self.class_names):
                d["per_class"][name]["auc"] = self.auc[c]
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def roc_tables(self) -> dict:
        """Class name -> two-column ``fpr,tpr`` CSV text."""
        out = {}
        for name, curve in zip(self.class_names, self.roc or []):
            buf = io.StringIO()
            buf.write("fpr,tpr\n")
            for f, t in zip(curve["fpr"], curve["tpr"]):
                buf.write(f"{float(f)!r},{float(t)!r}\n")
            out[name] = buf.getvalue()
        return out


def metrics(cm: ConfusionMatrix, class_names=CLASS_NAMES) -> MetricsReport:
    """Per-class one-vs-rest rates, their macro means and overall accuracy."""
    if cm.total == 0:
        raise ValueError("empty confusion matrix")
    per_class = [rates(*cm.one_vs_rest(c)) for c in range(cm.n_classes)]
    macro = {k: _macro([r[k] for r in per_class], k) for k in RATE_NAMES}
    acc = float(np.trace(cm.counts)) / cm.total
    err = 1.0 - acc
    return MetricsReport(cm, per_class, macro, acc, err, error_ci(err, cm.total), class_names=tuple(class_names))


def evaluate(true_labels, class_scores, *, predicted=None, resamples=1000, seed=0, meta=None) -> MetricsReport:
    """Full report from per-class scores (prediction = argmax unless given)."""
    S = np.asarray(class_scores, dtype=np.float64)
    y = np.asarray(true_labels, dtype=np.int64)
    pred = np.argmax(S, axis=1) if predicted is None else np.asarray(predicted)
    report = metrics(confusion(y, pred, S.shape[1]))
    present = [c for c in range(S.shape[1]) if np.any(y == c)]
    if len(present) == S.shape[1] and len(y) > S.shape[1]:
        roc = roc_auc(y, S)
        report.roc, report.auc, report.macro_auc = roc["curves"], roc["auc"], roc["macro_auc"]
        report.macro_auc_ci = auc_ci(y, S, resamples, seed)
    report.meta = dict(meta or {})
    return report


def mean_headlines(rows: list) -> dict:
    """Arithmetic mean of headline rows (the cross-fold "Mean" row)."""
    keys = rows[0].keys()
    out = {}
    for k in keys:
        vals = [r[k] for r in rows if r.get(k) is not None]
        out[k] = sum(vals) / len(vals) if vals else None
    return out
