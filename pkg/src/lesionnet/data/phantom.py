"""Synthetic fundus-like images with planted lesion blobs and exact masks.

Used as a self-contained ground truth for end-to-end checks: every planted
blob is written to its lesion's mask, and a sample is AMD-positive exactly
when at least one blob was planted.
"""

from __future__ import annotations

import colorsys
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from ..schema import PHANTOM, LesionSchema
from .manifest import DatasetManifest, ImageSample, write_manifest


@dataclass(frozen=True)
class LesionSignature:
    color: tuple[int, int, int]
    texture: str = "solid"  # solid | speckle | ring


DEFAULT_SIGNATURES = (
    LesionSignature((240, 230, 60), "solid"),  # drusen: yellow
    LesionSignature((40, 190, 110), "solid"),  # hemorrhage: green
    LesionSignature((250, 250, 235), "speckle"),  # exudates: white, speckled
    LesionSignature((120, 140, 220), "ring"),  # atrophy: blue with dark rim
)


@dataclass(frozen=True)
class PhantomConfig:
    image_count: int = 240
    image_size: int = 96
    lesion_count: int = 4
    radius_range: tuple[int, int] = (5, 10)
    positive_fraction: float = 0.6
    images_per_patient: int = 2
    seed: int = 0
    signatures: tuple[LesionSignature, ...] = field(default=())

    def __post_init__(self) -> None:
        if self.image_size < 32 or self.image_size % 16:
            raise ValueError("image_size must be a multiple of 16 and at least 32")
        lo, hi = self.radius_range
        if not 1 <= lo <= hi <= self.image_size / 4:
            raise ValueError("radius range must satisfy 1 <= min <= max <= image_size/4")
        if self.lesion_count < 1 or self.image_count < 1 or self.images_per_patient < 1:
            raise ValueError("counts must be positive")
        if not 0.0 <= self.positive_fraction <= 1.0:
            raise ValueError("positive_fraction must lie in [0, 1]")
        if self.signatures and len(self.signatures) != self.lesion_count:
            raise ValueError("one signature per lesion type is required")

    def resolved_signatures(self) -> tuple[LesionSignature, ...]:
        if self.signatures:
            return self.signatures
        sigs = list(DEFAULT_SIGNATURES[: self.lesion_count])
        textures = ("solid", "speckle", "ring")
        for i in range(len(sigs), self.lesion_count):
            r, g, b = colorsys.hsv_to_rgb((0.15 + 0.618 * i) % 1.0, 0.7, 0.95)
            sigs.append(LesionSignature((int(255 * r), int(255 * g), int(255 * b)), textures[i % 3]))
        return tuple(sigs)

    def schema(self) -> LesionSchema:
        if self.lesion_count <= len(PHANTOM):
            return LesionSchema(PHANTOM.name, PHANTOM.lesions[: self.lesion_count])
        return LesionSchema("phantom", tuple(f"lesion{i}" for i in range(self.lesion_count)))


def _background(rng: np.random.Generator, size: int) -> tuple[np.ndarray, np.ndarray, float, tuple[float, float]]:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    c = (size - 1) / 2.0
    radius = 0.47 * size
    dist = np.hypot(yy - c, xx - c)
    roi = dist <= radius

    base = np.array([200.0, 85.0, 40.0]) * rng.uniform(0.92, 1.08, size=3)
    shade = 1.0 - 0.2 * (dist / radius) ** 2
    # low-frequency illumination wobble
    phase = rng.uniform(0, 2 * np.pi, size=2)
    wobble = 1.0 + 0.05 * np.sin(2 * np.pi * xx / size + phase[0]) * np.cos(2 * np.pi * yy / size + phase[1])
    img = base[None, None, :] * (shade * wobble)[..., None]

    # optic disc on a random side of the macula
    side = rng.choice([-1.0, 1.0])
    disc = (c + rng.uniform(-0.05, 0.05) * size, c + side * 0.3 * size)
    d = np.hypot(yy - disc[0], xx - disc[1])
    disc_r = size / 11.0
    w = np.clip(1.5 - d / disc_r, 0.0, 1.0)[..., None]
    img = img * (1 - w) + np.array([230.0, 150.0, 150.0]) * w

    # a few dark vessel arcs leaving the disc
    vessels = np.zeros((size, size), dtype=bool)
    for _ in range(4):
        ang = rng.uniform(0, 2 * np.pi)
        curv = rng.uniform(-0.02, 0.02)
        t = np.linspace(0, 0.6 * size, 200)
        py = disc[0] + t * np.sin(ang + curv * t)
        px = disc[1] + t * np.cos(ang + curv * t)
        for y, x in zip(py, px):
            iy, ix = int(round(y)), int(round(x))
            if 0 <= iy < size and 0 <= ix < size:
                vessels[iy, ix] = True
    img[vessels] *= 0.7

    img += rng.normal(0.0, 4.0, size=img.shape)
    img[~roi] = 0.0
    return img, roi, radius, disc


def _plant(img: np.ndarray, rng: np.random.Generator, mask: np.ndarray, sig: LesionSignature) -> None:
    color = np.asarray(sig.color, dtype=np.float64)
    if sig.texture == "solid":
        img[mask] = 0.15 * img[mask] + 0.85 * color
    elif sig.texture == "speckle":
        hit = mask & (rng.random(mask.shape) < 0.75)
        img[mask] = 0.6 * img[mask] + 0.4 * color
        img[hit] = 0.1 * img[hit] + 0.9 * color
    elif sig.texture == "ring":
        rim = mask & ~ndimage.binary_erosion(mask)
        img[mask] = 0.15 * img[mask] + 0.85 * color
        img[rim] = 0.5 * color
    else:
        raise ValueError(f"unknown texture {sig.texture!r}")


def render_phantom(config: PhantomConfig, rng: np.random.Generator, positive: bool):
    """Render one image; returns (pixels uint8, masks bool[N,H,W], flags int[N])."""
    size = config.image_size
    n = config.lesion_count
    sigs = config.resolved_signatures()
    img, roi, radius, disc = _background(rng, size)
    masks = np.zeros((n, size, size), dtype=bool)
    flags = np.zeros(n, dtype=np.int64)
    if positive:
        active = rng.random(n) < 0.5
        if not active.any():
            active[rng.integers(n)] = True
        yy, xx = np.mgrid[0:size, 0:size]
        c = (size - 1) / 2.0
        placed: list[tuple[float, float, float]] = [(disc[0], disc[1], size / 11.0)]
        lo, hi = config.radius_range
        for i in np.flatnonzero(active):
            for _ in range(int(rng.integers(1, 4))):
                for _attempt in range(200):
                    r = float(rng.uniform(lo, hi))
                    cy, cx = rng.uniform(r + 2, size - r - 3, size=2)
                    if np.hypot(cy - c, cx - c) > radius - r - 2:
                        continue
                    if all(np.hypot(cy - py, cx - px) > r + pr + 1 for py, px, pr in placed):
                        break
                else:
                    continue
                placed.append((cy, cx, r))
                blob = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
                _plant(img, rng, blob, sigs[i])
                masks[i] |= blob
            flags[i] = int(masks[i].any())
    pixels = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return pixels, masks, flags


def generate_phantom_dataset(config: PhantomConfig, out_dir: str | Path) -> DatasetManifest:
    """Render the dataset into ``out_dir`` (images/, gt/, manifest.csv) and return its manifest."""
    out = Path(out_dir)
    try:
        (out / "images").mkdir(parents=True, exist_ok=True)
        (out / "gt").mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot write phantom dataset to {out}: {e}") from e

    schema = config.schema()
    rng = np.random.default_rng(config.seed)
    n_patients = -(-config.image_count // config.images_per_patient)
    n_pos = int(round(config.positive_fraction * n_patients))
    positive_patients = np.zeros(n_patients, dtype=bool)
    positive_patients[rng.permutation(n_patients)[:n_pos]] = True

    samples = []
    for k in range(config.image_count):
        p = k // config.images_per_patient
        image_id = f"img_{k:04d}"
        pixels, masks, flags = render_phantom(config, rng, bool(positive_patients[p]))
        img_path = out / "images" / f"{image_id}.png"
        Image.fromarray(pixels).save(img_path)
        gt_paths = {}
        for i, lesion in enumerate(schema.lesions):
            gp = out / "gt" / f"{image_id}_{lesion}.png"
            Image.fromarray(masks[i].astype(np.uint8) * 255).save(gp)
            gt_paths[lesion] = gp
        samples.append(
            ImageSample(image_id, f"patient_{p:04d}", int(flags.any()), img_path, flags, gt_paths)
        )
    manifest = DatasetManifest("phantom", schema, samples, diagnosis_coupling=True)
    write_manifest(manifest, out / "manifest.csv")
    cfg = asdict(config)
    cfg["signatures"] = [asdict(s) for s in config.resolved_signatures()]
    (out / "phantom_config.json").write_text(json.dumps(cfg, indent=2) + "\n", encoding="utf-8")
    return manifest
