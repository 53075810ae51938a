"""Fold aggregation and the two-sample significance test."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats


@dataclass(frozen=True)
class FoldedMetric:
    per_fold: tuple[float, ...]
    mean: float
    std: float

    def format(self, scale: float = 100.0, digits: int = 2) -> str:
        """``95.59±2.03`` style, AUCs shown as percentages by default."""
        return f"{self.mean * scale:.{digits}f}±{self.std * scale:.{digits}f}"

    def to_dict(self) -> dict:
        return {"per_fold": list(self.per_fold), "mean": self.mean, "std": self.std}


def folded_auc(per_fold: Sequence[float]) -> FoldedMetric:
    """Arithmetic mean and sample (n-1) standard deviation over folds."""
    v = np.asarray(per_fold, dtype=np.float64)
    if v.size < 2:
        raise ValueError("folded_auc needs at least 2 fold values")
    return FoldedMetric(tuple(v.tolist()), float(v.mean()), float(v.std(ddof=1)))


def t_test_two_tailed(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Classic pooled-variance Student's t with df = n_a + n_b - 2."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ValueError("each group needs at least 2 values")
    df = a.size + b.size - 2
    pooled = ((a.size - 1) * a.var(ddof=1) + (b.size - 1) * b.var(ddof=1)) / df
    diff = float(a.mean() - b.mean())
    if pooled == 0.0:
        if diff == 0.0:
            return 0.0, 1.0
        return math.copysign(math.inf, diff), 0.0
    res = stats.ttest_ind(a, b, equal_var=True)
    return float(res.statistic), float(res.pvalue)
