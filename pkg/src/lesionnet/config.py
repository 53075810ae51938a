"""Flat ``key = value`` run configuration.

Every key has a default and a one-line description (``lesionnet config``
prints them). Unknown keys are rejected by name.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Iterable, Mapping

from .data.phantom import PhantomConfig
from .model import ModelVariant
from .training import TrainConfig


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


_T = TrainConfig()
_P = PhantomConfig()

# key -> (default, description)
DEFAULTS: dict[str, tuple[Any, str]] = {
    "manifest": ("", "dataset manifest CSV"),
    "folds": ("", "fold assignment JSON written by `lesionnet folds`"),
    "fold": ("all", "held-out fold index, or 'all' to train one model per fold"),
    "k": (4, "number of cross-validation folds"),
    "variant": (_T.variant.value, "al-max, al-fc or a-only"),
    "learning_rate": (_T.learning_rate, "Adam step size, constant for the whole run"),
    "beta1": (_T.beta1, "Adam first-moment decay"),
    "beta2": (_T.beta2, "Adam second-moment decay"),
    "adam_eps": (_T.adam_eps, "Adam epsilon"),
    "epochs": (_T.epochs, "training epochs"),
    "finetune_epochs": (15, "epochs for `lesionnet finetune`"),
    "batch_size": (_T.batch_size, "images per optimiser step"),
    "seed": (_T.seed, "seed for initialisation, shuffling, augmentation and folds"),
    "init_source": (_T.init_source, "pretrained or random"),
    "pretrained_path": ("", "torchvision-style VGG-16 state dict for init_source=pretrained"),
    "pretrained_digest": ("", "expected SHA-256 of pretrained_path (optional)"),
    "width_divisor": (_T.width_divisor, "channel divisor for the reduced trunk (1 = full VGG-16)"),
    "target_width": (_T.target_width, "resize width for images wider than resize_above"),
    "resize_above": (_T.resize_above, "images at most this wide keep their size"),
    "augment": (_T.augment, "random flips, intensity and affine jitter during training"),
    "normalization": (_T.normalization, "imagenet (pretrained trunk) or unit (plain 0-1 scaling)"),
    "mapping": ("", "cross-dataset mapping JSON, or empty for the built-in table"),
    "tasks": ("diagnosis,lesions,segmentation", "comma-separated evaluation tasks"),
    "phantom_images": (_P.image_count, "phantom image count"),
    "phantom_size": (_P.image_size, "phantom image side in pixels (multiple of 16)"),
    "phantom_lesions": (_P.lesion_count, "phantom lesion types"),
    "phantom_positive": (_P.positive_fraction, "share of phantom images with lesions"),
    "phantom_images_per_patient": (_P.images_per_patient, "phantom images sharing one patient id"),
    "phantom_radius_min": (_P.radius_range[0], "smallest blob radius in pixels"),
    "phantom_radius_max": (_P.radius_range[1], "largest blob radius in pixels"),
}


def _parse(key: str, raw: str) -> Any:
    default = DEFAULTS[key][0]
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"invalid value {raw!r} for key {key!r}", key) from None
    return raw


class RunConfig(Mapping[str, Any]):
    def __init__(self, values: Mapping[str, Any] | None = None):
        self._v = {k: d for k, (d, _) in DEFAULTS.items()}
        for k, v in (values or {}).items():
            self.set(k, v)

    def set(self, key: str, value: Any) -> None:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}", key)
        value = _parse(key, value) if isinstance(value, str) else value
        if key == "variant" and value not in {v.value for v in ModelVariant}:
            raise ConfigError(f"invalid value {value!r} for key 'variant'", key)
        self._v[key] = value

    def __getitem__(self, key: str) -> Any:
        return self._v[key]

    def __getattr__(self, key: str) -> Any:
        try:
            return self._v[key]
        except KeyError:
            raise AttributeError(key) from None

    def __iter__(self):
        return iter(self._v)

    def __len__(self) -> int:
        return len(self._v)

    @classmethod
    def load(cls, path: str | Path | None = None, overrides: Iterable[str] = ()) -> "RunConfig":
        cfg = cls()
        if path:
            path = Path(path)
            if not path.is_file():
                raise ConfigError(f"config file not found: {path}")
            for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
                k, v = line.split("=", 1)
                cfg.set(k.strip(), v)
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not key=value")
            k, v = item.split("=", 1)
            cfg.set(k.strip(), v)
        return cfg

    def dumps(self) -> str:
        return "".join(f"{k} = {_format(self._v[k])}\n" for k in DEFAULTS)

    def echo(self, out_dir: str | Path) -> Path:
        p = Path(out_dir) / "config.txt"
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(self.dumps(), encoding="utf-8")
        return p

    def train_config(self, fold: int | None = None) -> TrainConfig:
        try:
            return TrainConfig(
                variant=self.variant, learning_rate=self.learning_rate, beta1=self.beta1, beta2=self.beta2,
                adam_eps=self.adam_eps, epochs=self.epochs, batch_size=self.batch_size, seed=self.seed,
                fold=fold, init_source=self.init_source, pretrained_path=self.pretrained_path or None,
                pretrained_digest=self.pretrained_digest or None, width_divisor=self.width_divisor,
                target_width=self.target_width, resize_above=self.resize_above, augment=self.augment,
                normalization=self.normalization,
            )
        except ValueError as e:
            key = next((k for k in DEFAULTS if str(e).startswith(k)), None)
            raise ConfigError(str(e), key) from None

    def phantom_config(self) -> PhantomConfig:
        try:
            return PhantomConfig(
                image_count=self.phantom_images, image_size=self.phantom_size, lesion_count=self.phantom_lesions,
                radius_range=(self.phantom_radius_min, self.phantom_radius_max),
                positive_fraction=self.phantom_positive, images_per_patient=self.phantom_images_per_patient,
                seed=self.seed,
            )
        except ValueError as e:
            raise ConfigError(str(e)) from None


def _format(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def describe() -> str:
    return "".join(f"{k} = {_format(d)}    # {doc}\n" for k, (d, doc) in DEFAULTS.items())
