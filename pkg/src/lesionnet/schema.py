"""Lesion vocabularies and cross-dataset label mappings.

The order of ``LesionSchema.lesions`` is the channel order of every lesion
vector, activation map stack and manifest column set downstream.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class LesionSchema:
    name: str
    lesions: tuple[str, ...]
    version: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "lesions", tuple(self.lesions))
        if len(self.lesions) < 1:
            raise SchemaError(f"schema {self.name!r} has no lesions")
        if len(set(self.lesions)) != len(self.lesions):
            raise SchemaError(f"schema {self.name!r} has duplicate lesion names")

    def __len__(self) -> int:
        return len(self.lesions)

    def index(self, lesion: str) -> int:
        try:
            return self.lesions.index(lesion)
        except ValueError:
            raise SchemaError(f"unknown lesion {lesion!r} in schema {self.name!r}") from None

    def to_dict(self) -> dict:
        return {"name": self.name, "lesions": list(self.lesions), "version": self.version}

    @classmethod
    def from_dict(cls, d: dict) -> "LesionSchema":
        return cls(d["name"], tuple(d["lesions"]), int(d.get("version", 1)))


@dataclass(frozen=True)
class SchemaMapping:
    """Maps a lesion vector in ``source`` order onto ``target`` order.

    ``direct`` pairs copy one source entry to one target entry; each
    ``pooled`` rule fills a target entry with the maximum over a group of
    source entries (logical OR for binary flags).
    """

    source: LesionSchema
    target: LesionSchema
    direct: tuple[tuple[str, str], ...] = ()
    pooled: tuple[tuple[str, tuple[str, ...]], ...] = ()
    _plan: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        direct = tuple((s, t) for s, t in self.direct)
        pooled = tuple((t, tuple(srcs)) for t, srcs in self.pooled)
        object.__setattr__(self, "direct", direct)
        object.__setattr__(self, "pooled", pooled)

        covered: dict[str, tuple[int, ...]] = {}
        used: list[str] = []
        for s, t in direct:
            self._claim(covered, t, (self.source.index(s),))
            used.append(s)
        for t, srcs in pooled:
            if not srcs:
                raise SchemaError(f"pooled rule for {t!r} has no sources")
            self._claim(covered, t, tuple(self.source.index(s) for s in srcs))
            used.extend(srcs)
        dup = sorted({s for s in used if used.count(s) > 1})
        if dup:
            raise SchemaError(f"source lesions used more than once: {dup}")
        missing = [t for t in self.target.lesions if t not in covered]
        if missing:
            raise SchemaError(f"target lesions not covered by any rule: {missing}")
        plan = tuple(covered[t] for t in self.target.lesions)
        object.__setattr__(self, "_plan", plan)

    def _claim(self, covered: dict, target: str, idx: tuple[int, ...]) -> None:
        self.target.index(target)
        if target in covered:
            raise SchemaError(f"target lesion {target!r} covered twice")
        covered[target] = idx

    @property
    def plan(self) -> tuple[tuple[int, ...], ...]:
        """Source indices feeding each target channel, in target order."""
        return self._plan

    def to_dict(self) -> dict:
        return {
            "source": self.source.to_dict(),
            "target": self.target.to_dict(),
            "direct": [list(p) for p in self.direct],
            "pooled": [[t, list(s)] for t, s in self.pooled],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SchemaMapping":
        return cls(
            LesionSchema.from_dict(d["source"]),
            LesionSchema.from_dict(d["target"]),
            tuple((s, t) for s, t in d.get("direct", [])),
            tuple((t, tuple(s)) for t, s in d.get("pooled", [])),
        )


@dataclass(frozen=True)
class CrossDatasetMapping:
    """Prediction-side and ground-truth-side mappings onto a shared label set."""

    predictions: SchemaMapping
    ground_truth: SchemaMapping

    def __post_init__(self) -> None:
        if self.predictions.target != self.ground_truth.target:
            raise SchemaError("prediction and ground-truth mappings disagree on the evaluation schema")

    @property
    def evaluation_schema(self) -> LesionSchema:
        return self.predictions.target

    def to_dict(self) -> dict:
        return {"predictions": self.predictions.to_dict(), "ground_truth": self.ground_truth.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "CrossDatasetMapping":
        return cls(SchemaMapping.from_dict(d["predictions"]), SchemaMapping.from_dict(d["ground_truth"]))

    @classmethod
    def load(cls, path: str | Path) -> "CrossDatasetMapping":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


AMDLESIONS = LesionSchema(
    "amdlesions",
    ("atrophy", "drusen", "exudates", "fibrosis", "hemorrhage", "pm", "pa", "ped", "others"),
)
ADAM = LesionSchema("adam", ("drusen", "exudates", "hemorrhage", "scar", "others"))
# Labels on which AMDLesions-trained models are scored against ADAM annotations.
ADAM_EVAL = LesionSchema("adam-eval", ("drusen", "exudates", "hemorrhage", "others"))

AMDLESIONS_TO_ADAM = CrossDatasetMapping(
    predictions=SchemaMapping(
        AMDLESIONS,
        ADAM_EVAL,
        direct=(("drusen", "drusen"), ("exudates", "exudates"), ("hemorrhage", "hemorrhage")),
        pooled=(("others", ("fibrosis", "atrophy", "pm", "pa", "ped", "others")),),
    ),
    ground_truth=SchemaMapping(
        ADAM,
        ADAM_EVAL,
        direct=(("drusen", "drusen"), ("exudates", "exudates"), ("hemorrhage", "hemorrhage")),
        pooled=(("others", ("scar", "others")),),
    ),
)

PHANTOM = LesionSchema("phantom", ("drusen", "hemorrhage", "exudates", "atrophy"))

BUILTIN_SCHEMAS = {s.name: s for s in (AMDLESIONS, ADAM, ADAM_EVAL, PHANTOM)}
BUILTIN_MAPPINGS = {("amdlesions", "adam"): AMDLESIONS_TO_ADAM}


def find_mapping(source: str, target: str) -> CrossDatasetMapping:
    try:
        return BUILTIN_MAPPINGS[(source, target)]
    except KeyError:
        raise SchemaError(f"no mapping known from schema {source!r} to {target!r}") from None
