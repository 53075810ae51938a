"""Per-fold scoring of trained checkpoints: diagnosis, lesions and coarse segmentation."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch

from ..checkpoint import Checkpoint
from ..data.folds import FoldAssignment
from ..data.loader import SampleCache, iter_batches
from ..data.manifest import DatasetManifest
from ..model import forward
from ..schema import CrossDatasetMapping, LesionSchema, find_mapping
from .mapping import map_gt_cross_schema, map_predictions_cross_schema
from .roc import RocCurve, ScoredSet, UndefinedAUC, merge_fold_curves, roc_curve
from .segmentation import PointingResult, cell_roi, downscale_gt, pointing_game, segmentation_scored_set
from .stats import FoldedMetric, folded_auc

TASKS = ("diagnosis", "lesions", "segmentation")


class EvaluationError(ValueError):
    pass


@dataclass
class ImagePrediction:
    """One image's outputs, already mapped into the evaluation schema."""

    image_id: str
    fold: int
    diagnosis: int
    diagnosis_prob: float
    lesion_flags: np.ndarray | None = None
    lesion_probs: np.ndarray | None = None
    maps: np.ndarray | None = None
    gt_cells: dict[str, np.ndarray] | None = None
    roi_cells: np.ndarray | None = None

    def dump(self, map_path: str | None = None) -> dict:
        return {
            "image_id": self.image_id,
            "fold": self.fold,
            "diagnosis_prob": self.diagnosis_prob,
            "lesion_probs": None if self.lesion_probs is None else self.lesion_probs.tolist(),
            "map_path": map_path,
        }


@dataclass
class EvalResult:
    schema: LesionSchema | None
    metrics: list[dict] = field(default_factory=list)
    curves: dict[tuple[str, str | None], dict] = field(default_factory=dict)
    predictions: list[ImagePrediction] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def metric(self, task: str, lesion: str | None = None) -> dict:
        for m in self.metrics:
            if m["task"] == task and m["lesion"] == lesion:
                return m
        raise KeyError((task, lesion))


def checkpoint_preprocessing(checkpoint: Checkpoint) -> dict:
    cfg = checkpoint.config.get("train", {})
    return {
        "normalization": cfg.get("normalization", "imagenet"),
        "target_width": cfg.get("target_width", 720),
        "resize_above": cfg.get("resize_above", 800),
    }


def resolve_mapping(
    checkpoint: Checkpoint, manifest: DatasetManifest, mapping: CrossDatasetMapping | None
) -> CrossDatasetMapping | None:
    if checkpoint.schema == manifest.schema:
        return None
    if mapping is None:
        mapping = find_mapping(checkpoint.schema.name, manifest.schema.name)
    if mapping.predictions.source != checkpoint.schema:
        raise EvaluationError(f"mapping expects predictions in {mapping.predictions.source.name!r}, "
                              f"checkpoint uses {checkpoint.schema.name!r}")
    if mapping.ground_truth.source != manifest.schema:
        raise EvaluationError(f"mapping expects labels in {mapping.ground_truth.source.name!r}, "
                              f"manifest uses {manifest.schema.name!r}")
    return mapping


@torch.no_grad()
def predict(
    checkpoint: Checkpoint,
    manifest: DatasetManifest,
    image_ids: Iterable[str],
    *,
    fold: int = 0,
    mapping: CrossDatasetMapping | None = None,
    batch_size: int = 8,
    cache: SampleCache | None = None,
) -> list[ImagePrediction]:
    pre = checkpoint_preprocessing(checkpoint)
    cache = cache or SampleCache(manifest, pre["target_width"], pre["resize_above"])
    mapping = resolve_mapping(checkpoint, manifest, mapping)
    model = checkpoint.build()
    out: list[ImagePrediction] = []
    for batch in iter_batches(cache, list(image_ids), batch_size, normalization=pre["normalization"]):
        rec = forward(model, batch.images)
        dprob = rec.diagnosis_prob.double().numpy()
        lprob = None if rec.lesion_probs is None else rec.lesion_probs.double().numpy()
        maps = None if rec.maps is None else torch.sigmoid(rec.maps.double()).numpy()
        for b, s in enumerate(batch.samples):
            h, w = s.pixels.shape[0] // 16, s.pixels.shape[1] // 16
            p = ImagePrediction(s.image_id, fold, int(s.diagnosis), float(dprob[b]))
            if lprob is not None:
                p.lesion_probs = lprob[b]
                p.maps = maps[b, :, :h, :w]
                if mapping is not None:
                    p.lesion_probs = map_predictions_cross_schema(p.lesion_probs, mapping.predictions)
                    p.maps = map_predictions_cross_schema(p.maps, mapping.predictions, axis=0)
            if s.lesion_flags is not None:
                p.lesion_flags = s.lesion_flags.astype(np.int8)
                if mapping is not None:
                    p.lesion_flags = map_gt_cross_schema(p.lesion_flags, mapping.ground_truth).astype(np.int8)
            if s.gt_maps:
                p.gt_cells = _gt_cells(s.gt_maps, manifest.schema, mapping)
            p.roi_cells = cell_roi(s.pixels)
            out.append(p)
    return out


def _gt_cells(gt_maps: dict, schema: LesionSchema, mapping: CrossDatasetMapping | None) -> dict[str, np.ndarray]:
    cells = {k: downscale_gt(v) for k, v in gt_maps.items()}
    if mapping is None:
        return cells
    out = {}
    target = mapping.ground_truth.target
    for t, idx in zip(target.lesions, mapping.ground_truth.plan):
        srcs = [schema.lesions[i] for i in idx if schema.lesions[i] in cells]
        if srcs:
            out[t] = np.logical_or.reduce([cells[s] for s in srcs])
    return out


def _summarise(values: list[float | None]) -> tuple[list[float | None], FoldedMetric | None]:
    defined = [v for v in values if v is not None]
    if len(defined) >= 2:
        return values, folded_auc(defined)
    if len(defined) == 1:
        return values, FoldedMetric(tuple(defined), defined[0], math.nan)
    return values, None


def _record(task: str, lesion: str | None, values: list[float | None], **extra) -> dict:
    values, fm = _summarise(values)
    return {
        "task": task,
        "lesion": lesion,
        "per_fold": values,
        "mean": None if fm is None else fm.mean,
        "std": None if fm is None or math.isnan(fm.std) else fm.std,
        **extra,
    }


def evaluate_run(
    checkpoints: Checkpoint | Sequence[Checkpoint],
    manifest: DatasetManifest,
    folds: FoldAssignment | None = None,
    which: Sequence[str] = TASKS,
    *,
    mapping: CrossDatasetMapping | None = None,
    out_dir: str | Path | None = None,
    batch_size: int = 8,
    pointing_dilation: int = 1,
) -> EvalResult:
    """Score each fold's held-out images with that fold's checkpoint.

    With ``folds`` the i-th checkpoint scores ``folds.test_ids(i)``; without,
    every checkpoint scores the whole manifest (external-dataset evaluation)
    and its index plays the role of the fold. Lesion outputs are mapped into
    the manifest's schema when the two schemas differ.
    """
    cks = [checkpoints] if isinstance(checkpoints, Checkpoint) else list(checkpoints)
    which = tuple(which)
    bad = [w for w in which if w not in TASKS]
    if bad or not which:
        raise EvaluationError(f"unknown evaluation task(s) {bad}; choose from {TASKS}")
    if not cks:
        raise EvaluationError("no checkpoints to evaluate")
    if folds is not None and len(cks) != folds.k:
        raise EvaluationError(f"{len(cks)} checkpoints for {folds.k} folds")
    variants = {c.variant for c in cks}
    needs_lesions = [w for w in which if w != "diagnosis"]
    if needs_lesions and not all(v.has_lesions for v in variants):
        raise EvaluationError("variant provides no lesion outputs")
    if "lesions" in which and not manifest.has_lesion_labels:
        raise EvaluationError(f"manifest {manifest.name!r} has no lesion labels")
    if "segmentation" in which and not manifest.has_gt_maps:
        raise EvaluationError(f"manifest {manifest.name!r} has no ground-truth maps")

    maps_ = [resolve_mapping(c, manifest, mapping) for c in cks]
    schema = None
    if needs_lesions or all(v.has_lesions for v in variants):
        schema = maps_[0].evaluation_schema if maps_[0] is not None else manifest.schema
    result = EvalResult(schema)

    caches: dict[tuple[int, int], SampleCache] = {}
    per_fold: list[list[ImagePrediction]] = []
    all_ids = [s.image_id for s in manifest.samples]
    for f, ck in enumerate(cks):
        ids = folds.test_ids(f) if folds is not None else all_ids
        pre = checkpoint_preprocessing(ck)
        key = (pre["target_width"], pre["resize_above"])
        cache = caches.setdefault(key, SampleCache(manifest, *key))
        per_fold.append(predict(ck, manifest, ids, fold=f, mapping=mapping, batch_size=batch_size, cache=cache))
    result.predictions = [p for preds in per_fold for p in preds]

    def add_curves(task, lesion, sets):
        curves, values = [], []
        for f, st in enumerate(sets):
            try:
                c = roc_curve(st)
            except (UndefinedAUC, ValueError) as e:
                result.warnings.append(f"{task}/{lesion or '-'} fold {f}: {e}")
                curves.append(None)
                values.append(None)
                continue
            curves.append(c)
            values.append(c.auc)
        ok = [c for c in curves if c is not None]
        result.curves[(task, lesion)] = {"folds": curves, "merged": merge_fold_curves(ok) if ok else None}
        result.metrics.append(_record(task, lesion, values))

    if "diagnosis" in which:
        add_curves("diagnosis", None, [
            ScoredSet([p.diagnosis_prob for p in preds], [p.diagnosis for p in preds],
                      tuple(p.image_id for p in preds)) for preds in per_fold
        ])
    if "lesions" in which:
        for i, name in enumerate(schema.lesions):
            add_curves("lesions", name, [
                ScoredSet([p.lesion_probs[i] for p in preds], [int(p.lesion_flags[i]) for p in preds],
                          tuple(p.image_id for p in preds)) for preds in per_fold
            ])
    if "segmentation" in which:
        for i, name in enumerate(schema.lesions):
            sets = []
            gt_pos, tp = [], []
            for f, preds in enumerate(per_fold):
                q = [p for p in preds if p.gt_cells and name in p.gt_cells]
                if not q:
                    sets.append(ScoredSet([], []))
                    gt_pos.append(None)
                    tp.append(None)
                    continue
                st = segmentation_scored_set([p.maps[i] for p in q], [p.gt_cells[name] for p in q], [p.roi_cells for p in q])
                sets.append(st)
                gt_pos.append(_pointing([p for p in q if p.gt_cells[name].any()], i, name, pointing_dilation))
                tp.append(_pointing([p for p in q if p.gt_cells[name].any() and p.lesion_probs[i] >= 0.5],
                                    i, name, pointing_dilation))
            add_curves("segmentation", name, sets)
            for gate, res in (("gt_positive", gt_pos), ("true_positive", tp)):
                total = sum((r for r in res if r is not None), PointingResult(0, 0))
                result.metrics.append(_record(
                    "pointing", name, [None if r is None or r.total == 0 else r.rate for r in res],
                    gate=gate, hits=total.hits, total=total.total,
                    rate=total.rate if total.total else None,
                ))
    if out_dir is not None:
        write_outputs(result, out_dir)
    return result


def _pointing(preds: list[ImagePrediction], i: int, name: str, dilation: int) -> PointingResult:
    if not preds:
        return PointingResult(0, 0)
    return pointing_game([p.maps[i] for p in preds], [p.gt_cells[name] for p in preds], dilation)


def pointing_summary(result: EvalResult, gate: str = "true_positive") -> PointingResult:
    """Hits and instances pooled over every lesion and fold."""
    total = PointingResult(0, 0)
    for m in result.metrics:
        if m["task"] == "pointing" and m.get("gate") == gate:
            total = total + PointingResult(m["hits"], m["total"])
    return total


def write_curve_csv(curve: RocCurve, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        fh.write(f"# auc={curve.auc!r}\n")
        w = csv.writer(fh)
        w.writerow(["fpr", "tpr"])
        for x, y in zip(curve.fpr.tolist(), curve.tpr.tolist()):
            w.writerow([repr(x), repr(y)])
    return path


def read_curve_csv(path: str | Path) -> RocCurve:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("# auc="):
        raise ValueError(f"{path} lacks the '# auc=' header line")
    auc = float(lines[0].split("=", 1)[1])
    rows = list(csv.reader(lines[2:]))
    fpr = np.array([float(r[0]) for r in rows])
    tpr = np.array([float(r[1]) for r in rows])
    return RocCurve(fpr, tpr, auc)


def curve_stem(task: str, lesion: str | None) -> str:
    return task if lesion is None else f"{task}_{lesion}"


def write_outputs(result: EvalResult, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "predictions.jsonl").open("w", encoding="utf-8") as fh:
        for p in result.predictions:
            rel = None
            if p.maps is not None:
                rel = f"maps/fold{p.fold}/{p.image_id}.npy"
                (out / rel).parent.mkdir(parents=True, exist_ok=True)
                np.save(out / rel, p.maps)
            fh.write(json.dumps(p.dump(rel), sort_keys=True) + "\n")
    for (task, lesion), c in result.curves.items():
        stem = curve_stem(task, lesion)
        for f, curve in enumerate(c["folds"]):
            if curve is not None:
                write_curve_csv(curve, out / "curves" / f"{stem}_fold{f}.csv")
        if c["merged"] is not None:
            write_curve_csv(c["merged"], out / "curves" / f"{stem}_merged.csv")
    payload = {
        "schema": None if result.schema is None else result.schema.to_dict(),
        "metrics": result.metrics,
        "warnings": result.warnings,
    }
    (out / "metrics.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
