"""Networks: the lesion-map classifier (Max / FC aggregation) and the diagnosis-only baseline.

The lesion-map network keeps the VGG-16 convolutional trunk minus its last
max-pooling (net stride 16), projects the trunk features onto one activation
map per lesion with a 1x1 convolution, global-max-pools each map into a lesion
logit and aggregates lesion logits into a diagnosis logit. Sigmoids come last.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn

STRIDE = 16
VGG16_CFG = (64, 64, "M", 128, 128, "M", 256, 256, 256, "M", 512, 512, 512, "M", 512, 512, 512, "M")


class ModelVariant(str, enum.Enum):
    AL_MAX = "al-max"
    AL_FC = "al-fc"
    A_ONLY = "a-only"

    @property
    def has_lesions(self) -> bool:
        return self is not ModelVariant.A_ONLY


@dataclass(frozen=True)
class ArchConfig:
    """Network shape. ``width_divisor`` > 1 gives the reduced trunk (same layers, fewer channels)."""

    variant: ModelVariant
    n_lesions: int
    width_divisor: int = 1
    baseline_pool: int = 7
    baseline_hidden: int = 4096
    dropout: float = 0.5

    @classmethod
    def reduced(cls, variant: ModelVariant | str, n_lesions: int, width_divisor: int = 8) -> "ArchConfig":
        return cls(ModelVariant(variant), n_lesions, width_divisor, baseline_pool=3,
                   baseline_hidden=4096 // width_divisor)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        d = dict(d)
        d["variant"] = ModelVariant(d["variant"])
        return cls(**d)


def make_trunk(width_divisor: int = 1, final_pool: bool = False) -> nn.Sequential:
    """VGG-16 ``features`` layout; layer indices match torchvision so its weights load by name."""
    layers: list[nn.Module] = []
    cfg = VGG16_CFG if final_pool else VGG16_CFG[:-1]
    c_in = 3
    for v in cfg:
        if v == "M":
            layers.append(nn.MaxPool2d(kernel_size=2, stride=2))
        else:
            c_out = max(1, v // width_divisor)
            layers += [nn.Conv2d(c_in, c_out, kernel_size=3, padding=1), nn.ReLU(inplace=True)]
            c_in = c_out
    return nn.Sequential(*layers)


def trunk_channels(width_divisor: int = 1) -> int:
    return max(1, 512 // width_divisor)


def check_input(x: torch.Tensor) -> None:
    if x.ndim != 4 or x.shape[1] != 3:
        raise ValueError(f"expected a (B, 3, H, W) batch, got shape {tuple(x.shape)}")
    h, w = x.shape[-2:]
    if h % STRIDE or w % STRIDE or h == 0 or w == 0:
        raise ValueError(f"input size {h}x{w} is not a positive multiple of {STRIDE}")


def global_max_pool(stack: torch.Tensor) -> torch.Tensor:
    """(..., N, h, w) activation maps -> (..., N) lesion logits."""
    if stack.shape[-1] == 0 or stack.shape[-2] == 0:
        raise ValueError("activation maps have empty spatial extent")
    return stack.amax(dim=(-2, -1))


def aggregate_max(lesion_logits: torch.Tensor) -> torch.Tensor:
    if lesion_logits.shape[-1] == 0:
        raise ValueError("cannot aggregate an empty lesion vector")
    return lesion_logits.amax(dim=-1)


def aggregate_fc(lesion_logits: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    """Diagnosis logit ``w . v + b`` with ``weight`` of shape (N,) or (1, N)."""
    w = weight.reshape(-1)
    if w.shape[0] != lesion_logits.shape[-1]:
        raise ValueError(f"FC weights have length {w.shape[0]}, lesion vector {lesion_logits.shape[-1]}")
    return lesion_logits @ w + bias.reshape(())


class LesionNet(nn.Module):
    def __init__(self, arch: ArchConfig):
        super().__init__()
        if not arch.variant.has_lesions:
            raise ValueError("LesionNet needs a lesion-producing variant")
        self.arch = arch
        self.features = make_trunk(arch.width_divisor, final_pool=False)
        self.head = nn.Conv2d(trunk_channels(arch.width_divisor), arch.n_lesions, kernel_size=1, bias=True)
        self.fc = nn.Linear(arch.n_lesions, 1) if arch.variant is ModelVariant.AL_FC else None

    def backbone(self, x: torch.Tensor) -> torch.Tensor:
        check_input(x)
        return self.features(x)

    def lesion_maps(self, feats: torch.Tensor) -> torch.Tensor:
        if feats.shape[1] != self.head.in_channels:
            raise ValueError(f"feature channels {feats.shape[1]} != head input {self.head.in_channels}")
        return self.head(feats)

    def forward(self, x: torch.Tensor) -> dict[str, torch.Tensor]:
        maps = self.lesion_maps(self.backbone(x))
        lesion_logits = global_max_pool(maps)
        if self.fc is None:
            diagnosis_logit = aggregate_max(lesion_logits)
        else:
            diagnosis_logit = aggregate_fc(lesion_logits, self.fc.weight, self.fc.bias)
        return {"maps": maps, "lesion_logits": lesion_logits, "diagnosis_logit": diagnosis_logit}


class BaselineNet(nn.Module):
    """Plain VGG-16 classifier with a single diagnosis output."""

    def __init__(self, arch: ArchConfig):
        super().__init__()
        self.arch = arch
        c = trunk_channels(arch.width_divisor)
        hidden = arch.baseline_hidden
        self.features = make_trunk(arch.width_divisor, final_pool=True)
        self.avgpool = nn.AdaptiveAvgPool2d((arch.baseline_pool, arch.baseline_pool))
        self.classifier = nn.Sequential(
            nn.Linear(c * arch.baseline_pool**2, hidden),
            nn.ReLU(inplace=True),
            nn.Dropout(arch.dropout),
            nn.Linear(hidden, hidden),
            nn.ReLU(inplace=True),
            nn.Dropout(arch.dropout),
            nn.Linear(hidden, 1),
        )

    def backbone(self, x: torch.Tensor) -> torch.Tensor:
        check_input(x)
        return self.features(x)

    def forward(self, x: torch.Tensor) -> dict[str, torch.Tensor]:
        f = self.avgpool(self.backbone(x))
        return {"diagnosis_logit": self.classifier(torch.flatten(f, 1)).squeeze(-1)}


def build_model(arch: ArchConfig) -> nn.Module:
    if arch.variant is ModelVariant.A_ONLY:
        return BaselineNet(arch)
    return LesionNet(arch)


@dataclass
class PredictionRecord:
    """Batched network outputs; lesion fields and maps are None for the baseline."""

    diagnosis_logit: torch.Tensor
    diagnosis_prob: torch.Tensor
    lesion_logits: torch.Tensor | None = None
    lesion_probs: torch.Tensor | None = None
    maps: torch.Tensor | None = None

    def detach(self) -> "PredictionRecord":
        f = lambda t: None if t is None else t.detach()  # noqa: E731
        return PredictionRecord(*(f(getattr(self, k)) for k in
                                  ("diagnosis_logit", "diagnosis_prob", "lesion_logits", "lesion_probs", "maps")))


def forward(model: nn.Module, images: torch.Tensor) -> PredictionRecord:
    out = model(images)
    d = out["diagnosis_logit"]
    if "lesion_logits" not in out:
        return PredictionRecord(d, torch.sigmoid(d))
    l = out["lesion_logits"]
    return PredictionRecord(d, torch.sigmoid(d), l, torch.sigmoid(l), out["maps"])


def export_maps(stack: torch.Tensor | np.ndarray) -> np.ndarray:
    """Activation-map logits -> per-lesion probability rasters in [0, 1]."""
    t = torch.as_tensor(stack)
    return torch.sigmoid(t.double()).numpy()


OVERLAY_COLORS = np.array(
    [(255, 230, 0), (255, 0, 0), (255, 255, 255), (0, 160, 255), (0, 255, 0), (255, 0, 255),
     (255, 128, 0), (128, 0, 255), (0, 255, 255)],
    dtype=np.float64,
)


def upsample_nearest(prob: np.ndarray, factor: int = STRIDE) -> np.ndarray:
    """Map cell (i, j) covers image rows factor*i .. factor*i+factor-1 (same for columns)."""
    return np.repeat(np.repeat(prob, factor, axis=-2), factor, axis=-1)


def render_overlay(pixels: np.ndarray, probs: np.ndarray, alpha: float = 0.6) -> np.ndarray:
    """Alpha-blend per-lesion probability maps onto an image, one colour per lesion.

    Each pixel takes the colour of its most probable lesion, with opacity
    ``alpha * probability``.
    """
    h, w = pixels.shape[:2]
    up = upsample_nearest(probs)[:, :h, :w]
    best = up.argmax(axis=0)
    strength = (alpha * up.max(axis=0))[..., None]
    colors = OVERLAY_COLORS[best % len(OVERLAY_COLORS)]
    out = pixels.astype(np.float64) * (1 - strength) + colors * strength
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)
