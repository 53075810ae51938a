"""Activation-map export: 16-bit probability PNGs, an overlay, and a JSON sidecar per image."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .checkpoint import Checkpoint
from .data.manifest import ImageSample
from .data.transforms import normalize, preprocess
from .evaluation.run import checkpoint_preprocessing
from .model import STRIDE, export_maps, forward, render_overlay


def probability_png(prob: np.ndarray, path: str | Path) -> Path:
    """Write probabilities in [0, 1] as a single-channel 16-bit PNG (value = round(p * 65535))."""
    a = np.rint(np.clip(prob, 0.0, 1.0) * 65535.0).astype(np.uint16)
    Image.fromarray(a).save(path)
    return Path(path)


def read_probability_png(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im, dtype=np.float64) / 65535.0


@torch.no_grad()
def export_image_maps(checkpoint: Checkpoint, image_path: str | Path, out_dir: str | Path,
                      model: torch.nn.Module | None = None) -> dict:
    if not checkpoint.variant.has_lesions:
        raise ValueError("variant provides no lesion outputs")
    image_path = Path(image_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pre = checkpoint_preprocessing(checkpoint)
    sample = preprocess(ImageSample(image_path.stem, "-", 0, image_path), pre["target_width"], pre["resize_above"])
    model = model or checkpoint.build()
    x = torch.from_numpy(normalize(sample.pixels, pre["normalization"]))[None]
    rec = forward(model, x)
    probs = export_maps(rec.maps[0])
    stem = image_path.stem
    files = []
    for name, p in zip(checkpoint.schema.lesions, probs):
        files.append(probability_png(p, out / f"{stem}_{name}.png").name)
    overlay = out / f"{stem}_overlay.png"
    Image.fromarray(render_overlay(sample.pixels, probs)).save(overlay)
    sidecar = {
        "image": str(image_path),
        "schema": checkpoint.schema.to_dict(),
        "channels": list(checkpoint.schema.lesions),
        "map_files": files,
        "overlay": overlay.name,
        "stride": STRIDE,
        "input_size": list(sample.pixels.shape[:2]),
        "map_size": list(probs.shape[1:]),
        "encoding": "uint16 = round(probability * 65535)",
        "lesion_probs": rec.lesion_probs[0].double().tolist(),
        "diagnosis_prob": float(rec.diagnosis_prob[0]),
        "checkpoint_digest": checkpoint.digest,
    }
    (out / f"{stem}.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return sidecar
