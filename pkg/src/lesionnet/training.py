"""Initialisation, training and fine-tuning."""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import torch
import torch.nn as nn

from .checkpoint import Checkpoint, state_digest
from .data.folds import FoldAssignment
from .data.loader import SampleCache, iter_batches
from .data.manifest import DatasetManifest
from .data.transforms import NORMALIZATIONS, AugmentConfig
from .losses import baseline_loss, combined_loss
from .model import ArchConfig, BaselineNet, ModelVariant, build_model, forward

log = logging.getLogger(__name__)

INIT_SOURCES = ("pretrained", "checkpoint", "random")


class TrainingError(RuntimeError):
    def __init__(self, message: str, record: dict | None = None):
        super().__init__(message)
        self.record = record or {}


@dataclass
class TrainConfig:
    variant: ModelVariant = ModelVariant.AL_MAX
    learning_rate: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 100
    batch_size: int = 8
    seed: int = 0
    fold: int | None = None
    init_source: str = "pretrained"
    pretrained_path: str | None = None
    pretrained_digest: str | None = None
    width_divisor: int = 1
    target_width: int = 720
    resize_above: int = 800
    augment: bool = True
    normalization: str = "imagenet"

    def __post_init__(self) -> None:
        self.variant = ModelVariant(self.variant)
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"normalization must be one of {sorted(NORMALIZATIONS)}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        for name in ("beta1", "beta2"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.init_source not in INIT_SOURCES:
            raise ValueError(f"init_source must be one of {INIT_SOURCES}")

    def arch(self, n_lesions: int) -> ArchConfig:
        if self.width_divisor == 1:
            return ArchConfig(self.variant, n_lesions)
        return ArchConfig.reduced(self.variant, n_lesions, self.width_divisor)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        return d


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    epochs: list[dict] = field(default_factory=list)
    steps: int = 0


def he_uniform_(module: nn.Module, generator: torch.Generator) -> None:
    """U(-sqrt(6/fan_in), +sqrt(6/fan_in)) weights and zero biases for every conv/linear layer."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            fan_in = m.weight[0].numel()
            bound = math.sqrt(6.0 / fan_in)
            with torch.no_grad():
                m.weight.uniform_(-bound, bound, generator=generator)
                if m.bias is not None:
                    m.bias.zero_()


def _added_layers(model: nn.Module) -> list[nn.Module]:
    if isinstance(model, BaselineNet):
        return [model.classifier[-1]]
    return [m for m in (model.head, model.fc) if m is not None]


def load_pretrained_state(path: str | Path, digest: str | None = None) -> dict[str, torch.Tensor]:
    """Read a torchvision-style VGG-16 state dict (``features.*``/``classifier.*`` keys)."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"pretrained weights not found: {path}")
    if digest is not None:
        actual = hashlib.sha256(path.read_bytes()).hexdigest()
        if actual != digest:
            raise ValueError(f"pretrained weights digest mismatch for {path}")
    state = torch.load(path, map_location="cpu", weights_only=True)
    if "state_dict" in state:
        state = state["state_dict"]
    return state


def init_parameters(
    arch: ArchConfig,
    init_source: str = "random",
    *,
    seed: int = 0,
    pretrained: dict[str, torch.Tensor] | None = None,
    checkpoint: Checkpoint | None = None,
) -> nn.Module:
    """Build a model and fill its parameters.

    ``random`` draws every layer He-uniform; ``pretrained`` copies the
    original VGG layers from a state dict and draws only the added layers;
    ``checkpoint`` copies all tensors verbatim.
    """
    model = build_model(arch)
    g = torch.Generator().manual_seed(seed)
    if init_source == "checkpoint":
        if checkpoint is None:
            raise ValueError("init_source='checkpoint' needs a checkpoint")
        if checkpoint.arch != arch:
            raise ValueError("checkpoint architecture does not match")
        model.load_state_dict({k: v.clone() for k, v in checkpoint.state.items()})
        return model
    if init_source == "random":
        he_uniform_(model, g)
        return model
    if init_source != "pretrained":
        raise ValueError(f"unknown init source {init_source!r}")
    if pretrained is None:
        raise ValueError("init_source='pretrained' needs pretrained weights")
    he_uniform_(model, g)
    own = model.state_dict()
    added = {id(p) for m in _added_layers(model) for p in m.parameters()}
    names = {n for n, p in model.named_parameters() if id(p) not in added}
    for n in sorted(names):
        if n not in pretrained:
            raise ValueError(f"pretrained weights lack {n!r}")
        if tuple(pretrained[n].shape) != tuple(own[n].shape):
            raise ValueError(f"shape mismatch for {n!r}: {tuple(pretrained[n].shape)} vs {tuple(own[n].shape)}")
        own[n] = pretrained[n].to(own[n].dtype)
    model.load_state_dict(own)
    return model


def make_optimizer(model: nn.Module, cfg: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(
        model.parameters(), lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2), eps=cfg.adam_eps
    )


def _run_loop(
    model: nn.Module,
    cfg: TrainConfig,
    manifest: DatasetManifest,
    train_ids: list[str],
    use_lesion_loss: bool,
    sink: Callable[[dict], None] | None,
    augment_cfg: AugmentConfig,
    cache: SampleCache | None,
) -> tuple[torch.optim.Adam, list[dict], int]:
    if not train_ids:
        raise TrainingError("no training samples")
    emit = sink or (lambda rec: None)
    cache = cache or SampleCache(manifest, cfg.target_width, cfg.resize_above)
    opt = make_optimizer(model, cfg)
    torch.manual_seed(cfg.seed)
    emit({"event": "start", "fold": cfg.fold, "param_digest": state_digest(model.state_dict()),
          "n_train": len(train_ids), "lesion_loss": use_lesion_loss})
    step = 0
    history = []
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        totals = {"loss": 0.0, "loss_diag": 0.0, "loss_lesion": 0.0}
        seen = 0
        for batch in iter_batches(
            cache, train_ids, cfg.batch_size, seed=cfg.seed, epoch=epoch, shuffle=True,
            augment_cfg=augment_cfg if cfg.augment else None, normalization=cfg.normalization,
        ):
            rec = forward(model, batch.images)
            if use_lesion_loss:
                lv = combined_loss(rec, batch.diagnosis, batch.lesions)
                loss, parts = lv.total, lv.breakdown()
            else:
                loss = baseline_loss(rec, batch.diagnosis)
                parts = {"loss": loss.item(), "loss_diag": loss.item(), "loss_lesion": None}
            if not torch.isfinite(loss):
                record = {"event": "diverged", "step": step + 1, "epoch": epoch, "image_ids": batch.image_ids}
                emit(record)
                raise TrainingError(f"non-finite loss at step {step + 1} (epoch {epoch})", record)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            step += 1
            lr = opt.param_groups[0]["lr"]
            emit({"step": step, "epoch": epoch, **{k: v for k, v in parts.items() if v is not None}, "lr": lr})
            n = len(batch.image_ids)
            seen += n
            for k, v in parts.items():
                if v is not None:
                    totals[k] += v * n
        summary = {"epoch": epoch, "loss": totals["loss"] / seen, "loss_diag": totals["loss_diag"] / seen}
        if use_lesion_loss:
            summary["loss_lesion"] = totals["loss_lesion"] / seen
        history.append(summary)
        emit({"event": "epoch", **summary})
        log.info("fold %s epoch %d loss %.4f", cfg.fold, epoch, summary["loss"])
    model.eval()
    return opt, history, step


def train(
    cfg: TrainConfig,
    manifest: DatasetManifest,
    folds: FoldAssignment | None = None,
    *,
    sink: Callable[[dict], None] | None = None,
    pretrained: dict[str, torch.Tensor] | None = None,
    augment_cfg: AugmentConfig = AugmentConfig(),
    cache: SampleCache | None = None,
) -> TrainResult:
    """Train on every fold except ``cfg.fold`` (or on everything when no fold is held out)."""
    arch = cfg.arch(len(manifest.schema))
    if cfg.variant.has_lesions and not manifest.has_lesion_labels:
        raise TrainingError(f"variant {cfg.variant.value} needs lesion labels; manifest {manifest.name!r} has none")
    if cfg.init_source == "pretrained" and pretrained is None:
        if cfg.pretrained_path is None:
            raise TrainingError("init_source='pretrained' but no pretrained_path configured")
        pretrained = load_pretrained_state(cfg.pretrained_path, cfg.pretrained_digest)
    if cfg.init_source == "checkpoint":
        raise TrainingError("use fine_tune() to continue from a checkpoint")
    model = init_parameters(arch, cfg.init_source, seed=cfg.seed, pretrained=pretrained)
    ids = _train_ids(manifest, folds, cfg.fold)
    opt, history, steps = _run_loop(model, cfg, manifest, ids, cfg.variant.has_lesions, sink, augment_cfg, cache)
    ckpt = Checkpoint.from_model(model, manifest.schema, opt, cfg.epochs, {"train": cfg.to_dict()})
    return TrainResult(ckpt, history, steps)


def fine_tune(
    checkpoint: Checkpoint,
    target: DatasetManifest,
    folds: FoldAssignment | None = None,
    cfg: TrainConfig | None = None,
    *,
    sink: Callable[[dict], None] | None = None,
    augment_cfg: AugmentConfig = AugmentConfig(),
    cache: SampleCache | None = None,
) -> TrainResult:
    """Continue training ``checkpoint`` on ``target`` (15 epochs unless ``cfg`` says otherwise).

    The lesion term is kept only when the target carries lesion labels in
    the checkpoint's own schema; otherwise only the diagnostic loss is used.
    """
    if cfg is None:
        base = checkpoint.config.get("train", {})
        cfg = TrainConfig(**{**base, "epochs": 15, "init_source": "checkpoint", "fold": None})
    cfg = replace(cfg, variant=checkpoint.variant, init_source="checkpoint",
                  width_divisor=checkpoint.arch.width_divisor)
    model = init_parameters(checkpoint.arch, "checkpoint", checkpoint=checkpoint)
    use_lesions = (
        checkpoint.variant.has_lesions and target.has_lesion_labels and target.schema == checkpoint.schema
    )
    ids = _train_ids(target, folds, cfg.fold)
    opt, history, steps = _run_loop(model, cfg, target, ids, use_lesions, sink, augment_cfg, cache)
    config = {**checkpoint.config, "fine_tune": {**cfg.to_dict(), "source_digest": state_digest(checkpoint.state),
                                                 "target": target.name}}
    ckpt = Checkpoint.from_model(model, checkpoint.schema, opt, cfg.epochs, config)
    return TrainResult(ckpt, history, steps)


def _train_ids(manifest: DatasetManifest, folds: FoldAssignment | None, fold: int | None) -> list[str]:
    ids = [s.image_id for s in manifest.samples]
    if fold is None or folds is None:
        return ids
    if not 0 <= fold < folds.k:
        raise TrainingError(f"fold {fold} out of range for k={folds.k}")
    train = set(folds.train_ids(fold))
    return [i for i in ids if i in train]
