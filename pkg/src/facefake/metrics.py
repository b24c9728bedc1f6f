"""Log loss, precision/recall/F1 and ROC AUC over per-video predictions."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Any, Optional, Sequence

import numpy as np

CLIP_EPS = 1e-15

# name, log loss, AUC, F1 exactly as published; None renders as "-"
REFERENCE_ROWS = (
    {"name": "Proposed MTCNN-EfficientNetB5", "logloss": "0.4278", "auc": "0.9380", "f1": "0.8682"},
    {"name": "EfficientNet-Vision Transformer", "logloss": None, "auc": "0.951", "f1": "0.88"},
    {"name": "Ensemble CNN", "logloss": "0.464", "auc": None, "f1": None},
)


@dataclass(frozen=True)
class LabeledPredictionSet:
    y: tuple[int, ...]
    p_hat: tuple[float, ...]
    clip_eps: float = CLIP_EPS

    def __post_init__(self):
        y = tuple(int(v) for v in self.y)
        p = tuple(float(v) for v in self.p_hat)
        if len(y) != len(p):
            raise ValueError("labels and predictions differ in length")
        if any(v not in (0, 1) for v in y):
            raise ValueError("labels must be 0 or 1")
        if any(not 0.0 <= v <= 1.0 for v in p):
            raise ValueError("predictions must lie in [0, 1]")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "p_hat", p)

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, label: int) -> "LabeledPredictionSet":
        idx = [i for i, v in enumerate(self.y) if v == label]
        return LabeledPredictionSet(tuple(self.y[i] for i in idx),
                                    tuple(self.p_hat[i] for i in idx), self.clip_eps)


def _require(s: LabeledPredictionSet) -> None:
    if len(s) == 0:
        raise ValueError("metric of an empty prediction set")


def log_loss(s: LabeledPredictionSet) -> float:
    _require(s)
    y = np.asarray(s.y, dtype=np.float64)
    p = np.clip(np.asarray(s.p_hat, dtype=np.float64), s.clip_eps, 1 - s.clip_eps)
    terms = y * np.log(p) + (1 - y) * np.log(1 - p)
    return max(0.0, -math.fsum(terms) / len(y))


def per_class_log_loss(s: LabeledPredictionSet) -> dict[str, Optional[float]]:
    """Log loss on REAL (y=0) and FAKE (y=1) subsets; None marks an absent class."""
    _require(s)
    out: dict[str, Optional[float]] = {}
    for name, label in (("real", 0), ("fake", 1)):
        sub = s.subset(label)
        out[name] = log_loss(sub) if len(sub) else None
    return out


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    degenerate: tuple[str, ...] = ()


def confusion(s: LabeledPredictionSet, threshold: float = 0.5) -> tuple[int, int, int, int]:
    tp = fp = fn = tn = 0
    for y, p in zip(s.y, s.p_hat):
        pred = p >= threshold
        if pred and y:
            tp += 1
        elif pred:
            fp += 1
        elif y:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


def prf_from_counts(tp: int, fp: int, fn: int) -> PRF:
    degenerate = []
    if tp + fp == 0:
        precision = 0.0
        degenerate.append("precision")
    else:
        precision = tp / (tp + fp)
    if tp + fn == 0:
        recall = 0.0
        degenerate.append("recall")
    else:
        recall = tp / (tp + fn)
    if tp == 0:
        f1 = 0.0
        degenerate.append("f1")
    else:
        # 2PR / (P + R) with P and R expanded into counts
        f1 = 2 * tp / (2 * tp + fp + fn)
    return PRF(precision, recall, f1, tp, fp, fn, tuple(degenerate))


def precision_recall_f1(s: LabeledPredictionSet, threshold: float = 0.5) -> PRF:
    _require(s)
    tp, fp, fn, _ = confusion(s, threshold)
    return prf_from_counts(tp, fp, fn)


def roc_auc(s: LabeledPredictionSet) -> float:
    """Trapezoidal area under the ROC curve, one vertex per distinct score.

    The area is accumulated in integers (twice the area times n_pos * n_neg),
    so ties contribute exactly half a pair and the result equals the
    Mann-Whitney statistic.
    """
    _require(s)
    y = np.asarray(s.y)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC AUC needs both classes")
    scores = np.asarray(s.p_hat)
    order = np.argsort(-scores, kind="stable")
    scores, y = scores[order], y[order]
    distinct = np.nonzero(np.diff(scores))[0]
    ends = np.append(distinct, len(y) - 1)
    tps = np.cumsum(y)[ends].astype(np.int64)
    fps = (ends + 1 - tps).astype(np.int64)
    tps = np.concatenate([[0], tps])
    fps = np.concatenate([[0], fps])
    twice_area = int(np.sum(np.diff(fps) * (tps[1:] + tps[:-1])))
    return twice_area / (2 * n_pos * n_neg)


@dataclass
class MetricsReport:
    logloss: float
    logloss_real: Optional[float]
    logloss_fake: Optional[float]
    auc: Optional[float]
    precision: float
    recall: float
    f1: float
    n_videos: int
    threshold: float
    degenerate: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["degenerate"] = list(self.degenerate)
        return d


def evaluate(s: LabeledPredictionSet, threshold: float = 0.5) -> MetricsReport:
    per_class = per_class_log_loss(s)
    prf = precision_recall_f1(s, threshold)
    both = 0 < sum(s.y) < len(s)
    return MetricsReport(
        logloss=log_loss(s),
        logloss_real=per_class["real"],
        logloss_fake=per_class["fake"],
        auc=roc_auc(s) if both else None,
        precision=prf.precision,
        recall=prf.recall,
        f1=prf.f1,
        n_videos=len(s),
        threshold=threshold,
        degenerate=prf.degenerate,
    )


def _cell(v: Any) -> str:
    if v is None:
        return "-"
    if isinstance(v, str):
        return v
    return f"{v:.4f}"


def comparison_table(rows: Sequence[dict[str, Any]]) -> str:
    """Plain-text grid with columns Model / Log loss / AUC / F1 score.

    String cells are printed verbatim, floats with four decimals, missing
    values as "-".
    """
    header = ["Model", "Log loss", "AUC", "F1 score"]
    body = [[str(r["name"]), _cell(r.get("logloss")), _cell(r.get("auc")), _cell(r.get("f1"))]
            for r in rows]
    widths = [max(len(row[i]) for row in [header, *body]) for i in range(4)]
    rule = "+" + "+".join("-" * (w + 2) for w in widths) + "+"

    def line(cells):
        return "|" + "|".join(f" {c.center(w)} " for c, w in zip(cells, widths)) + "|"

    out = [rule, line(header), rule]
    for row in body:
        out += [line(row), rule]
    return "\n".join(out)
