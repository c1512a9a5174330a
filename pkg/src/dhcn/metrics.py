"""Annotation metrics: sample- and concept-level mean F1 and mean average precision.

F1 between an empty prediction and an empty truth counts as 1, and as 0
when exactly one side is empty.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, ValidationError


@dataclass
class EvalReport:
    mf_s: float
    mf_c: float
    map: float
    per_concept: list = field(default_factory=list)  # (precision, recall, f1, ap) per concept

    def as_dict(self, concepts=None):
        names = concepts or [str(k) for k in range(len(self.per_concept))]
        return {
            "mf_s": self.mf_s,
            "mf_c": self.mf_c,
            "map": self.map,
            "per_concept": [
                {"concept": name, "precision": p, "recall": r, "f1": f, "average_precision": ap}
                for name, (p, r, f, ap) in zip(names, self.per_concept)
            ],
        }


def _pair(pred, truth):
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if pred.shape != truth.shape or pred.ndim != 2:
        raise ShapeError(f"prediction shape {pred.shape} does not match truth shape {truth.shape}")
    return pred, truth


def _f1(tp, fp, fn):
    denom = 2 * tp + fp + fn
    return np.where(denom == 0, 1.0, 2 * tp / np.where(denom == 0, 1, denom))


def _counts(pred, truth, axis):
    tp = np.sum(pred & truth, axis=axis)
    fp = np.sum(pred & ~truth, axis=axis)
    fn = np.sum(~pred & truth, axis=axis)
    return tp, fp, fn


def mf_sample(pred, truth):
    """Mean over images of the F1 between predicted and true keyword sets."""
    pred, truth = _pair(pred, truth)
    if pred.shape[0] == 0:
        raise ValidationError("MF-S undefined without images")
    return float(np.mean(_f1(*_counts(pred, truth, axis=1))))


def mf_concept(pred, truth):
    """Mean over concepts of the per-concept F1 across images."""
    pred, truth = _pair(pred, truth)
    if pred.shape[1] == 0:
        raise ValidationError("MF-C undefined without concepts")
    return float(np.mean(_f1(*_counts(pred, truth, axis=0))))


def average_precision(scores, truth):
    """AP of one concept: images ranked by descending score, ties by index."""
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth, dtype=bool)
    order = np.lexsort((np.arange(scores.size), -scores))
    hits = truth[order]
    if not hits.any():
        return float("nan")
    ranks = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, ranks.size + 1) / ranks))


def mean_average_precision(scores, truth):
    """Mean AP over the concepts that have at least one positive image."""
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth, dtype=bool)
    if scores.shape != truth.shape or scores.ndim != 2:
        raise ShapeError(f"score shape {scores.shape} does not match truth shape {truth.shape}")
    aps = [average_precision(scores[:, k], truth[:, k]) for k in range(truth.shape[1]) if truth[:, k].any()]
    if not aps:
        raise ValidationError("mAP undefined: no concept has a positive image")
    return float(np.mean(aps))


def evaluate(scores, truth, pred=None):
    """Full report; decisions default to ``scores > 0``."""
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth, dtype=bool)
    pred = scores > 0 if pred is None else np.asarray(pred, dtype=bool)
    pred, truth = _pair(pred, truth)
    tp, fp, fn = _counts(pred, truth, axis=0)
    precision = np.where(tp + fp > 0, tp / np.maximum(tp + fp, 1), 0.0)
    recall = np.where(tp + fn > 0, tp / np.maximum(tp + fn, 1), 0.0)
    f1 = _f1(tp, fp, fn)
    per = [(float(precision[k]), float(recall[k]), float(f1[k]),
            average_precision(scores[:, k], truth[:, k]) if truth[:, k].any() else None)
           for k in range(truth.shape[1])]
    return EvalReport(mf_sample(pred, truth), mf_concept(pred, truth), mean_average_precision(scores, truth), per)
