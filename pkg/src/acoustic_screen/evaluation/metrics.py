"""ROC curve and trapezoidal AUC."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from ..errors import IdSetMismatch, SingleClass
from ..scores import ScoreSet


def roc_curve(y_score, y_true) -> tuple[np.ndarray, np.ndarray]:
    """(FPR, TPR) points at every distinct threshold, starting at (0, 0).

    Tied scores are crossed in a single step, which is what gives the
    trapezoid its half-credit for ties.
    """
    s = np.asarray(y_score, dtype=np.float64)
    y = np.asarray(y_true).astype(bool)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("ROC needs at least one positive and one negative")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last_of_run = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tps = np.cumsum(y)[last_of_run]
    fps = (last_of_run + 1) - tps
    fpr = np.r_[0.0, fps / n_neg]
    tpr = np.r_[0.0, tps / n_pos]
    return fpr, tpr


def auc_from_arrays(y_score, y_true) -> float:
    fpr, tpr = roc_curve(y_score, y_true)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def roc_auc(scores: ScoreSet, labels: Mapping[str, int]) -> float:
    """Area under the ROC curve for the recordings in ``scores``."""
    missing = [k for k in scores.scores if k not in labels]
    if missing:
        raise IdSetMismatch(f"no label for {len(missing)} scored ids, e.g. {missing[0]!r}")
    ids = sorted(scores.scores)
    return auc_from_arrays(scores.array(ids), [labels[i] for i in ids])
