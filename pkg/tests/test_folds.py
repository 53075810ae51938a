import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lesionnet.acceptance import fold_violations, random_manifest
from lesionnet.data.folds import FoldAssignment, FoldError, make_folds
from lesionnet.data.manifest import DatasetManifest, ImageSample
from lesionnet.schema import LesionSchema

SCHEMA = LesionSchema("s", ("x",))


def manifest_of(patients):
    """patients: list of (diagnosis, n_images)."""
    samples = [ImageSample(f"p{i}_{k}", f"p{i}", d) for i, (d, n) in enumerate(patients) for k in range(n)]
    return DatasetManifest("m", SCHEMA, samples)


def test_fewer_patients_than_folds():
    with pytest.raises(FoldError, match="fewer patients than folds"):
        make_folds(manifest_of([(1, 2)]), k=2)


def test_eight_single_image_patients_balance_exactly():
    m = manifest_of([(1, 1)] * 4 + [(0, 1)] * 4)
    fa = make_folds(m, k=4, seed=3)
    for f in range(4):
        ids = fa.test_ids(f)
        diag = [s.diagnosis for s in m.samples if s.image_id in ids]
        assert sorted(diag) == [0, 1]


def test_deterministic_for_seed():
    m = manifest_of([(i % 2, 1 + i % 3) for i in range(30)])
    assert make_folds(m, 4, seed=9).assignment == make_folds(m, 4, seed=9).assignment


def test_warns_when_a_class_has_too_few_patients():
    m = manifest_of([(1, 1)] * 2 + [(0, 1)] * 6)
    with pytest.warns(UserWarning, match="AMD patients"):
        fa = make_folds(m, k=4)
    assert fa.warnings


def test_save_load(tmp_path):
    m = manifest_of([(i % 2, 2) for i in range(12)])
    fa = make_folds(m, 3, seed=1)
    back = FoldAssignment.load(fa.save(tmp_path / "f.json"))
    assert back.assignment == fa.assignment and back.k == 3


@pytest.mark.filterwarnings("ignore:only .* patients")
@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(1, 5)), min_size=4, max_size=80),
       st.integers(2, 5), st.integers(0, 2**31 - 1))
def test_invariants_hold_for_any_manifest(patients, k, seed):
    if len(patients) < k:
        return
    m = manifest_of(patients)
    fa = make_folds(m, k, seed)
    assert fold_violations(m, fa.assignment, k) == []


def test_violation_oracle_detects_split_patients():
    m = random_manifest(np.random.default_rng(0), 12)
    fa = make_folds(m, 4, 0)
    bad = dict(fa.assignment)
    multi = next(s for s in m.samples if sum(t.patient_id == s.patient_id for t in m.samples) > 1)
    bad[multi.image_id] = (bad[multi.image_id] + 1) % 4
    assert any("spans folds" in v for v in fold_violations(m, bad, 4))
