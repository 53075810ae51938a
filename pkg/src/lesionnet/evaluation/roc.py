"""ROC curves over scored sets and their trapezoidal AUC."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class UndefinedAUC(ValueError):
    pass


@dataclass(frozen=True)
class ScoredSet:
    """Scores in [0, 1] with binary labels; ``units`` names what was scored (images or map cells)."""

    scores: np.ndarray
    labels: np.ndarray
    units: tuple | None = None

    def __post_init__(self) -> None:
        s = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        y = np.asarray(self.labels).reshape(-1)
        if s.shape != y.shape:
            raise ValueError(f"{s.size} scores but {y.size} labels")
        if not np.all(np.isin(y, (0, 1))):
            raise ValueError("labels must be 0 or 1")
        if not np.all(np.isfinite(s)):
            raise ValueError("scores must be finite")
        if self.units is not None and len(self.units) != s.size:
            raise ValueError("units and scores differ in length")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "labels", y.astype(np.int8))

    def __len__(self) -> int:
        return self.scores.size

    @property
    def n_pos(self) -> int:
        return int(self.labels.sum())

    @property
    def n_neg(self) -> int:
        return len(self) - self.n_pos

    @classmethod
    def concat(cls, sets: Sequence["ScoredSet"]) -> "ScoredSet":
        units = None
        if sets and all(s.units is not None for s in sets):
            units = tuple(u for s in sets for u in s.units)
        return cls(np.concatenate([s.scores for s in sets]), np.concatenate([s.labels for s in sets]), units)


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float
    thresholds: np.ndarray | None = None

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def trapezoid_auc(fpr: np.ndarray, tpr: np.ndarray) -> float:
    fpr = np.asarray(fpr, dtype=np.float64)
    tpr = np.asarray(tpr, dtype=np.float64)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def roc_curve(data: ScoredSet | tuple) -> RocCurve:
    """Sweep the threshold down through the unique scores.

    Tied scores move the curve diagonally, which the trapezoid rule scores
    as one half per tied positive/negative pair.
    """
    if not isinstance(data, ScoredSet):
        data = ScoredSet(*data)
    pos, neg = data.n_pos, data.n_neg
    if pos == 0 or neg == 0:
        raise UndefinedAUC(f"AUC undefined: {pos} positives and {neg} negatives")
    order = np.argsort(-data.scores, kind="mergesort")
    s = data.scores[order]
    y = data.labels[order].astype(np.int64)
    # index of the last element of each run of equal scores
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    tpr = np.r_[0.0, tp / pos]
    fpr = np.r_[0.0, fp / neg]
    thresholds = np.r_[np.inf, s[last]]
    return RocCurve(fpr, tpr, trapezoid_auc(fpr, tpr), thresholds)


def auc(scores, labels) -> float:
    return roc_curve(ScoredSet(scores, labels)).auc


def merge_fold_curves(curves: Sequence[RocCurve]) -> RocCurve:
    """Union of all folds' operating points, sorted by (FPR, TPR) without duplicates.

    Meant for plotting; the AUC to report is the fold mean, not this curve's area.
    """
    if not curves:
        raise ValueError("no curves to merge")
    pts = np.unique(np.concatenate([np.stack([c.fpr, c.tpr], axis=1) for c in curves]), axis=0)
    fpr, tpr = pts[:, 0], pts[:, 1]
    return RocCurve(fpr, tpr, trapezoid_auc(fpr, tpr))
