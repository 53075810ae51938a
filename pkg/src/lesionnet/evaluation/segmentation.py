"""Coarse segmentation scoring at activation-map resolution."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from ..data.transforms import roi_mask
from .roc import RocCurve, ScoredSet, roc_curve

STRIDE = 16


def _blocks(a: np.ndarray, factor: int) -> np.ndarray:
    h, w = a.shape
    if h % factor or w % factor:
        raise ValueError(f"raster {h}x{w} is not a multiple of {factor}")
    return a.reshape(h // factor, factor, w // factor, factor)


def downscale_gt(gt_map: np.ndarray, factor: int = STRIDE) -> np.ndarray:
    """Block-max: a cell is foreground iff any pixel of its ``factor`` x ``factor`` block is."""
    return _blocks(np.asarray(gt_map).astype(bool), factor).any(axis=(1, 3))


def cell_roi(pixels: np.ndarray, factor: int = STRIDE, threshold: int = 10) -> np.ndarray:
    """Cells touching the field of view; cells made only of black padding or background are dropped."""
    return downscale_gt(roi_mask(pixels, threshold), factor)


def segmentation_scored_set(
    maps: Sequence[np.ndarray],
    gts: Sequence[np.ndarray],
    rois: Sequence[np.ndarray] | None = None,
) -> ScoredSet:
    if not maps:
        raise ValueError("no images carry a ground-truth map for this lesion")
    scores, labels, units = [], [], []
    for k, (m, g) in enumerate(zip(maps, gts)):
        m = np.asarray(m, dtype=np.float64)
        g = np.asarray(g).astype(bool)
        if m.shape != g.shape:
            raise ValueError(f"map {m.shape} and ground truth {g.shape} differ in shape")
        keep = np.ones_like(g) if rois is None else np.asarray(rois[k]).astype(bool)
        scores.append(m[keep])
        labels.append(g[keep])
        units.extend((k, int(i), int(j)) for i, j in zip(*np.nonzero(keep)))
    return ScoredSet(np.concatenate(scores), np.concatenate(labels).astype(np.int8), tuple(units))


def eval_segmentation(
    maps: Sequence[np.ndarray],
    gts: Sequence[np.ndarray],
    rois: Sequence[np.ndarray] | None = None,
) -> RocCurve:
    """One ROC over (cell probability, cell label) pairs pooled across images."""
    return roc_curve(segmentation_scored_set(maps, gts, rois))


@dataclass(frozen=True)
class PointingResult:
    hits: int
    total: int

    @property
    def rate(self) -> float:
        return self.hits / self.total

    def __add__(self, other: "PointingResult") -> "PointingResult":
        return PointingResult(self.hits + other.hits, self.total + other.total)


def pointing_hit(prob_map: np.ndarray, gt_cells: np.ndarray, dilation: int = 1) -> bool:
    g = np.asarray(gt_cells).astype(bool)
    if dilation > 0:
        g = ndimage.binary_dilation(g, structure=np.ones((3, 3), bool), iterations=dilation)
    i, j = np.unravel_index(int(np.argmax(prob_map)), prob_map.shape)
    return bool(g[i, j])


def pointing_game(maps: Sequence[np.ndarray], gt_maps: Sequence[np.ndarray], dilation: int = 1) -> PointingResult:
    """Share of positive instances whose map argmax falls in the (dilated) ground-truth cells.

    Instances whose ground truth is empty are not positives and are skipped.
    """
    hits = total = 0
    for m, g in zip(maps, gt_maps):
        g = np.asarray(g).astype(bool)
        if not g.any():
            continue
        if np.shape(m) != g.shape:
            raise ValueError(f"map {np.shape(m)} and ground truth {g.shape} differ in shape")
        total += 1
        hits += pointing_hit(np.asarray(m), g, dilation)
    if total == 0:
        raise ValueError("pointing game needs at least one positive instance")
    return PointingResult(hits, total)
