"""Preprocessing cache and batch assembly."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .manifest import DatasetManifest, ImageSample
from .transforms import AugmentConfig, augment, augment_rng, normalize, preprocess


@dataclass
class Batch:
    image_ids: list[str]
    images: torch.Tensor
    diagnosis: torch.Tensor
    lesions: torch.Tensor | None
    samples: list[ImageSample]


class SampleCache:
    """Preprocessed (loaded, resized, padded) samples keyed by image id."""

    def __init__(self, manifest: DatasetManifest, target_width: int = 720, resize_above: int = 800):
        self.manifest = manifest
        self.target_width = target_width
        self.resize_above = resize_above
        self._by_id = manifest.by_id()
        self._cache: dict[str, ImageSample] = {}

    def __getitem__(self, image_id: str) -> ImageSample:
        s = self._cache.get(image_id)
        if s is None:
            s = preprocess(self._by_id[image_id], self.target_width, self.resize_above)
            self._cache[image_id] = s
        return s


def collate(samples: list[ImageSample], dtype=torch.float32, normalization: str = "imagenet") -> Batch:
    """Stack samples, padding each with black to the largest height/width in the batch."""
    H = max(s.pixels.shape[0] for s in samples)
    W = max(s.pixels.shape[1] for s in samples)
    arrs = []
    for s in samples:
        p = s.pixels
        if p.shape[:2] != (H, W):
            q = np.zeros((H, W, 3), dtype=np.uint8)
            q[: p.shape[0], : p.shape[1]] = p
            p = q
        arrs.append(normalize(p, normalization))
    images = torch.from_numpy(np.stack(arrs)).to(dtype)
    diagnosis = torch.tensor([s.diagnosis for s in samples], dtype=dtype)
    lesions = None
    if all(s.lesion_flags is not None for s in samples):
        lesions = torch.from_numpy(np.stack([s.lesion_flags for s in samples])).to(dtype)
    return Batch([s.image_id for s in samples], images, diagnosis, lesions, samples)


def iter_batches(
    cache: SampleCache,
    image_ids: list[str],
    batch_size: int,
    *,
    seed: int = 0,
    epoch: int = 0,
    shuffle: bool = False,
    augment_cfg: AugmentConfig | None = None,
    dtype=torch.float32,
    normalization: str = "imagenet",
):
    ids = sorted(image_ids)
    if shuffle:
        order = np.random.default_rng([seed, epoch]).permutation(len(ids))
        ids = [ids[i] for i in order]
    for start in range(0, len(ids), batch_size):
        chunk = ids[start: start + batch_size]
        samples = [cache[i] for i in chunk]
        if augment_cfg is not None:
            samples = [augment(s, augment_rng(seed, epoch, s.image_id), augment_cfg) for s in samples]
        yield collate(samples, dtype, normalization)
