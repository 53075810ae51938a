"""Patient-grouped, class-stratified k-fold assignment."""

from __future__ import annotations

import json
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .manifest import DatasetManifest


class FoldError(ValueError):
    pass


@dataclass
class FoldAssignment:
    k: int
    assignment: dict[str, int]
    seed: int | None = None
    warnings: list[str] = field(default_factory=list)

    def test_ids(self, fold: int) -> list[str]:
        return [i for i, f in self.assignment.items() if f == fold]

    def train_ids(self, fold: int) -> list[str]:
        return [i for i, f in self.assignment.items() if f != fold]

    def to_dict(self) -> dict:
        return {"k": self.k, "seed": self.seed, "warnings": self.warnings, "assignment": self.assignment}

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=False) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "FoldAssignment":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        a = {str(k): int(v) for k, v in d["assignment"].items()}
        if any(not 0 <= v < d["k"] for v in a.values()):
            raise FoldError(f"fold index out of range in {path}")
        return cls(int(d["k"]), a, d.get("seed"), list(d.get("warnings", [])))


def make_folds(manifest: DatasetManifest, k: int = 4, seed: int = 0) -> FoldAssignment:
    """Assign every image to one of ``k`` folds.

    All images of a patient land in the same fold. Patients are placed
    greedily, largest first, into the fold currently holding the fewest
    samples of their class, so per-fold class counts never spread by more
    than the largest patient group. Ties are broken at random with ``seed``.
    """
    if k < 2:
        raise FoldError("k must be at least 2")
    groups: dict[str, list] = defaultdict(list)
    for s in manifest.samples:
        groups[s.patient_id].append(s)
    if len(groups) < k:
        raise FoldError(f"fewer patients than folds ({len(groups)} < {k})")

    rng = np.random.default_rng(seed)
    patients = sorted(groups)
    patients = [patients[i] for i in rng.permutation(len(patients))]
    pos = {p: sum(s.diagnosis for s in groups[p]) for p in patients}
    neg = {p: len(groups[p]) - pos[p] for p in patients}

    notes = []
    n_pos_patients = sum(1 for p in patients if pos[p] > 0)
    n_neg_patients = sum(1 for p in patients if neg[p] > 0)
    for label, n in (("AMD", n_pos_patients), ("non-AMD", n_neg_patients)):
        if n < k:
            msg = f"only {n} {label} patients for {k} folds"
            notes.append(msg)
            warnings.warn(msg, stacklevel=2)

    pos_count = np.zeros(k, dtype=np.int64)
    neg_count = np.zeros(k, dtype=np.int64)
    fold_of: dict[str, int] = {}

    def place(p: str, primary: np.ndarray) -> None:
        key = np.stack([primary, pos_count + neg_count])
        # lexicographic minimum over (class count, total count), random among exact ties
        best = np.flatnonzero(key[0] == key[0].min())
        best = best[key[1][best] == key[1][best].min()]
        f = int(best[rng.integers(len(best))])
        fold_of[p] = f
        pos_count[f] += pos[p]
        neg_count[f] += neg[p]

    positives = sorted((p for p in patients if pos[p] > 0), key=lambda p: -pos[p])
    negatives = sorted((p for p in patients if pos[p] == 0), key=lambda p: -neg[p])
    for p in positives:
        place(p, pos_count)
    for p in negatives:
        place(p, neg_count)

    assignment = {s.image_id: fold_of[s.patient_id] for s in manifest.samples}
    return FoldAssignment(k, assignment, seed, notes)
