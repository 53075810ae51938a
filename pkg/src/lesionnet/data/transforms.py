"""Image geometry and photometric transforms.

Everything here works on ``ImageSample`` objects holding uint8 HxWx3 pixels
and optional boolean gt masks; masks always follow the image geometry with
nearest-neighbour sampling.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, replace

import numpy as np
from PIL import Image
from scipy import ndimage

from .manifest import ImageSample

STRIDE = 16
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
# "unit" keeps plain 0-1 scaling, so black background and padding both map to exactly zero
NORMALIZATIONS = {"imagenet": (IMAGENET_MEAN, IMAGENET_STD), "unit": ((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))}


def _ceil_to(n: int, m: int) -> int:
    return -(-n // m) * m


def pad_to_multiple(sample: ImageSample, multiple: int = STRIDE) -> ImageSample:
    """Pad bottom/right with black so both dimensions are multiples of ``multiple``."""
    h, w = sample.pixels.shape[:2]
    H, W = _ceil_to(h, multiple), _ceil_to(w, multiple)
    if (H, W) == (h, w):
        return sample
    pixels = np.zeros((H, W, 3), dtype=np.uint8)
    pixels[:h, :w] = sample.pixels
    gt = None
    if sample.gt_maps is not None:
        gt = {}
        for k, m in sample.gt_maps.items():
            out = np.zeros((H, W), dtype=bool)
            out[:h, :w] = m
            gt[k] = out
    return replace(sample, pixels=pixels, gt_maps=gt)


def resize_to_width(sample: ImageSample, target_width: int = 720) -> ImageSample:
    """Rescale to ``target_width`` keeping the aspect ratio, then pad to multiples of 16.

    Images whose width already equals ``target_width`` (or its padded value)
    are only padded, which makes the operation idempotent.
    """
    if sample.pixels is None or sample.pixels.size == 0 or min(sample.pixels.shape[:2]) == 0:
        raise ValueError(f"zero-area image {sample.image_id!r}")
    h, w = sample.pixels.shape[:2]
    if w in (target_width, _ceil_to(target_width, STRIDE)):
        return pad_to_multiple(sample)
    new_h = max(1, int(round(h * target_width / w)))
    size = (target_width, new_h)
    pixels = np.asarray(Image.fromarray(sample.pixels).resize(size, Image.BILINEAR), dtype=np.uint8)
    gt = None
    if sample.gt_maps is not None:
        gt = {
            k: np.asarray(Image.fromarray(m.astype(np.uint8) * 255).resize(size, Image.NEAREST)) > 127
            for k, m in sample.gt_maps.items()
        }
    return pad_to_multiple(replace(sample, pixels=pixels, gt_maps=gt))


def preprocess(sample: ImageSample, target_width: int = 720, resize_above: int = 800) -> ImageSample:
    """Load if needed; rescale images wider than ``resize_above``; always pad to multiples of 16."""
    sample = sample.load()
    if sample.pixels.shape[1] > resize_above:
        return resize_to_width(sample, target_width)
    return pad_to_multiple(sample)


def normalize(pixels: np.ndarray, mode: str = "imagenet") -> np.ndarray:
    """uint8 HxWx3 -> float32 3xHxW, scaled to [0, 1] then standardised per channel."""
    mean, std = NORMALIZATIONS[mode]
    x = pixels.astype(np.float32) / 255.0
    x = (x - np.asarray(mean, np.float32)) / np.asarray(std, np.float32)
    return np.ascontiguousarray(x.transpose(2, 0, 1))


def roi_mask(pixels: np.ndarray, threshold: int = 10) -> np.ndarray:
    """Field-of-view mask: pixels whose brightest channel exceeds ``threshold``."""
    return pixels.max(axis=2) > threshold


@dataclass(frozen=True)
class AugmentConfig:
    p_hflip: float = 0.5
    p_vflip: float = 0.5
    channel_scale: tuple[float, float] = (0.95, 1.05)
    brightness: tuple[float, float] = (-0.05, 0.05)
    rotation_deg: tuple[float, float] = (-10.0, 10.0)
    scale: tuple[float, float] = (0.95, 1.05)
    shear_deg: tuple[float, float] = (-5.0, 5.0)


@dataclass(frozen=True)
class AugmentParams:
    hflip: bool = False
    vflip: bool = False
    channel_scale: tuple[float, float, float] = (1.0, 1.0, 1.0)
    brightness: float = 0.0
    rotation_deg: float = 0.0
    scale: float = 1.0
    shear_deg: float = 0.0

    def as_dict(self) -> dict:
        return asdict(self)


def augment_rng(seed: int, epoch: int, image_id: str) -> np.random.Generator:
    """Per-sample generator keyed on (seed, epoch, image_id); independent of visiting order."""
    h = int.from_bytes(hashlib.sha256(image_id.encode("utf-8")).digest()[:8], "little")
    return np.random.default_rng([seed, epoch, h])


def sample_augment_params(rng: np.random.Generator, cfg: AugmentConfig = AugmentConfig()) -> AugmentParams:
    u = rng.uniform
    return AugmentParams(
        hflip=bool(u() < cfg.p_hflip),
        vflip=bool(u() < cfg.p_vflip),
        channel_scale=tuple(float(v) for v in u(*cfg.channel_scale, size=3)),
        brightness=float(u(*cfg.brightness)),
        rotation_deg=float(u(*cfg.rotation_deg)),
        scale=float(u(*cfg.scale)),
        shear_deg=float(u(*cfg.shear_deg)),
    )


def _affine_matrix(params: AugmentParams) -> np.ndarray | None:
    """Forward 2x2 map in (row, col) coordinates, or None for the identity."""
    if params.rotation_deg == 0 and params.scale == 1 and params.shear_deg == 0:
        return None
    t = math.radians(params.rotation_deg)
    sh = math.tan(math.radians(params.shear_deg))
    # x = col, y = row; rotation * shear-along-x * isotropic scale
    rot = np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])
    shear = np.array([[1.0, sh], [0.0, 1.0]])
    fwd_xy = rot @ shear * params.scale
    swap = np.array([[0.0, 1.0], [1.0, 0.0]])
    return swap @ fwd_xy @ swap


def _warp(a: np.ndarray, fwd: np.ndarray, order: int) -> np.ndarray:
    h, w = a.shape[:2]
    c = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    inv = np.linalg.inv(fwd)
    offset = c - inv @ c
    if a.ndim == 2:
        return ndimage.affine_transform(a, inv, offset=offset, order=order, mode="constant", cval=0)
    return np.stack(
        [ndimage.affine_transform(a[..., k], inv, offset=offset, order=order, mode="constant", cval=0)
         for k in range(a.shape[2])],
        axis=-1,
    )


def apply_augment(sample: ImageSample, params: AugmentParams) -> ImageSample:
    """Apply ``params``; labels are carried over untouched and sizes are preserved."""
    pixels = sample.pixels
    gt = dict(sample.gt_maps) if sample.gt_maps is not None else None
    if params.hflip:
        pixels = pixels[:, ::-1]
        gt = {k: m[:, ::-1] for k, m in gt.items()} if gt is not None else None
    if params.vflip:
        pixels = pixels[::-1]
        gt = {k: m[::-1] for k, m in gt.items()} if gt is not None else None
    if params.channel_scale != (1.0, 1.0, 1.0) or params.brightness != 0.0:
        x = pixels.astype(np.float32) * np.asarray(params.channel_scale, np.float32)
        x += np.float32(params.brightness * 255.0)
        pixels = np.clip(np.rint(x), 0, 255).astype(np.uint8)
    fwd = _affine_matrix(params)
    if fwd is not None:
        pixels = _warp(pixels.astype(np.float32), fwd, order=1)
        pixels = np.clip(np.rint(pixels), 0, 255).astype(np.uint8)
        if gt is not None:
            gt = {k: _warp(m.astype(np.uint8), fwd, order=0) > 0 for k, m in gt.items()}
    pixels = np.ascontiguousarray(pixels)
    if gt is not None:
        gt = {k: np.ascontiguousarray(m) for k, m in gt.items()}
    return replace(sample, pixels=pixels, gt_maps=gt)


def augment(sample: ImageSample, rng: np.random.Generator, cfg: AugmentConfig = AugmentConfig()) -> ImageSample:
    return apply_augment(sample, sample_augment_params(rng, cfg))
