"""CSV dataset manifests.

One row per image with columns ``image_path``, ``patient_id``, ``amd``, one
0/1 column per schema lesion (all or none of them) and optional ``gt_<lesion>``
columns holding paths to single-channel masks. ``image_id`` is optional and
defaults to ``image_path``. Relative paths resolve against the manifest's
directory. Dataset-level metadata (schema, diagnosis coupling) lives in a
``<stem>.schema.json`` sidecar unless passed explicitly.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from ..schema import LesionSchema

BASE_COLUMNS = ("image_path", "patient_id", "amd")
GT_PREFIX = "gt_"


class ManifestError(ValueError):
    pass


@dataclass
class ImageSample:
    image_id: str
    patient_id: str
    diagnosis: int
    image_path: Path | None = None
    lesion_flags: np.ndarray | None = None
    gt_paths: dict[str, Path] = field(default_factory=dict)
    pixels: np.ndarray | None = None
    gt_maps: dict[str, np.ndarray] | None = None

    @property
    def loaded(self) -> bool:
        return self.pixels is not None

    def load(self) -> "ImageSample":
        """Return a copy with ``pixels`` (H, W, 3 uint8) and ``gt_maps`` read from disk."""
        if self.loaded:
            return self
        if self.image_path is None:
            raise ManifestError(f"sample {self.image_id!r} has neither pixels nor an image path")
        with Image.open(self.image_path) as im:
            pixels = np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
        gt = None
        if self.gt_paths:
            gt = {}
            for lesion, p in self.gt_paths.items():
                with Image.open(p) as im:
                    m = np.asarray(im.convert("L")) > 127
                if m.shape != pixels.shape[:2]:
                    raise ManifestError(f"gt map {p} does not match image size of {self.image_id!r}")
                gt[lesion] = m
        return replace(self, pixels=pixels, gt_maps=gt)


@dataclass
class DatasetManifest:
    name: str
    schema: LesionSchema
    samples: list[ImageSample]
    diagnosis_coupling: bool = True

    @property
    def has_lesion_labels(self) -> bool:
        return bool(self.samples) and all(s.lesion_flags is not None for s in self.samples)

    @property
    def has_gt_maps(self) -> bool:
        return any(s.gt_paths for s in self.samples)

    def by_id(self) -> dict[str, ImageSample]:
        return {s.image_id: s for s in self.samples}

    def subset(self, image_ids) -> "DatasetManifest":
        keep = set(image_ids)
        return replace(self, samples=[s for s in self.samples if s.image_id in keep])


def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".schema.json")


def load_manifest(
    path: str | Path,
    schema: LesionSchema | None = None,
    diagnosis_coupling: bool | None = None,
    check_files: bool = True,
) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    name = path.stem
    side = sidecar_path(path)
    if side.is_file():
        meta = json.loads(side.read_text(encoding="utf-8"))
        name = meta.get("name", name)
        if schema is None:
            schema = LesionSchema.from_dict(meta["schema"])
        if diagnosis_coupling is None:
            diagnosis_coupling = bool(meta.get("diagnosis_coupling", True))
    if diagnosis_coupling is None:
        diagnosis_coupling = True

    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = list(reader.fieldnames or [])
        rows = list(reader)

    for col in BASE_COLUMNS:
        if col not in header:
            raise ManifestError(f"missing column {col!r} in {path}")
    extra = [c for c in header if c not in BASE_COLUMNS and c != "image_id"]
    lesion_cols = [c for c in extra if not c.startswith(GT_PREFIX)]
    gt_cols = [c for c in extra if c.startswith(GT_PREFIX)]
    if schema is None:
        if not lesion_cols:
            raise ManifestError(f"no schema given for {path} and no lesion columns to infer one from")
        schema = LesionSchema(name, tuple(lesion_cols))
    for c in lesion_cols:
        if c not in schema.lesions:
            raise ManifestError(f"unknown lesion column {c!r} (schema {schema.name!r})")
    for c in gt_cols:
        if c[len(GT_PREFIX):] not in schema.lesions:
            raise ManifestError(f"unknown lesion in gt column {c!r} (schema {schema.name!r})")
    if lesion_cols and len(lesion_cols) != len(schema):
        absent = [l for l in schema.lesions if l not in lesion_cols]
        raise ManifestError(f"manifest {path} lacks lesion columns {absent}")

    root = path.parent
    samples: list[ImageSample] = []
    seen: set[str] = set()
    for lineno, row in enumerate(rows, start=2):
        img = (row.get("image_path") or "").strip()
        pid = (row.get("patient_id") or "").strip()
        if not pid:
            raise ManifestError(f"missing patient_id on line {lineno} of {path}")
        iid = (row.get("image_id") or "").strip() or img
        if iid in seen:
            raise ManifestError(f"duplicate image_id {iid!r} on line {lineno} of {path}")
        seen.add(iid)
        diag = _binary(row["amd"], "amd", lineno)
        flags = None
        if lesion_cols:
            flags = np.array([_binary(row[l], l, lineno) for l in schema.lesions], dtype=np.int64)
            if diagnosis_coupling and diag == 0 and flags.any():
                raise ManifestError(f"non-AMD sample on line {lineno} carries lesion flags")
        gt_paths = {}
        for c in gt_cols:
            v = (row.get(c) or "").strip()
            if v:
                gt_paths[c[len(GT_PREFIX):]] = _resolve(root, v)
        image_path = _resolve(root, img)
        if check_files:
            for p in (image_path, *gt_paths.values()):
                if not p.is_file():
                    raise ManifestError(f"file not found: {p} (line {lineno})")
        samples.append(ImageSample(iid, pid, diag, image_path, flags, gt_paths))

    return DatasetManifest(name, schema, samples, diagnosis_coupling)


def write_manifest(manifest: DatasetManifest, path: str | Path) -> Path:
    """Write ``manifest`` as CSV plus schema sidecar. Paths are stored relative when possible."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    schema = manifest.schema
    with_flags = manifest.has_lesion_labels
    gt_lesions = [l for l in schema.lesions if any(l in s.gt_paths for s in manifest.samples)]
    header = ["image_id", *BASE_COLUMNS]
    if with_flags:
        header += list(schema.lesions)
    header += [GT_PREFIX + l for l in gt_lesions]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for s in manifest.samples:
            row = [s.image_id, _relative(path.parent, s.image_path), s.patient_id, int(s.diagnosis)]
            if with_flags:
                row += [int(v) for v in s.lesion_flags]
            row += [_relative(path.parent, s.gt_paths[l]) if l in s.gt_paths else "" for l in gt_lesions]
            w.writerow(row)
    meta = {"name": manifest.name, "schema": schema.to_dict(), "diagnosis_coupling": manifest.diagnosis_coupling}
    sidecar_path(path).write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    return path


def _binary(value: str, column: str, lineno: int) -> int:
    v = (value or "").strip()
    if v not in ("0", "1"):
        raise ManifestError(f"column {column!r} on line {lineno} must be 0 or 1, got {value!r}")
    return int(v)


def _resolve(root: Path, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else root / p


def _relative(root: Path, p: Path | None) -> str:
    if p is None:
        return ""
    try:
        return Path(p).resolve().relative_to(root.resolve()).as_posix()
    except ValueError:
        return str(p)
