import json

import pytest

from lesionnet.schema import (
    ADAM,
    ADAM_EVAL,
    AMDLESIONS,
    AMDLESIONS_TO_ADAM,
    CrossDatasetMapping,
    LesionSchema,
    SchemaError,
    SchemaMapping,
    find_mapping,
)


def test_builtin_vocabularies():
    assert AMDLESIONS.lesions == ("atrophy", "drusen", "exudates", "fibrosis", "hemorrhage", "pm", "pa", "ped",
                                  "others")
    assert ADAM.lesions == ("drusen", "exudates", "hemorrhage", "scar", "others")
    assert len(AMDLESIONS) == 9


def test_schema_rejects_duplicates_and_empty():
    with pytest.raises(SchemaError, match="duplicate"):
        LesionSchema("x", ("a", "a"))
    with pytest.raises(SchemaError, match="no lesions"):
        LesionSchema("x", ())


def test_schema_round_trip():
    assert LesionSchema.from_dict(AMDLESIONS.to_dict()) == AMDLESIONS


def test_mapping_plan_follows_target_order():
    plan = AMDLESIONS_TO_ADAM.predictions.plan
    names = [[AMDLESIONS.lesions[i] for i in idx] for idx in plan]
    assert names == [["drusen"], ["exudates"], ["hemorrhage"], ["fibrosis", "atrophy", "pm", "pa", "ped", "others"]]
    gt = [[ADAM.lesions[i] for i in idx] for idx in AMDLESIONS_TO_ADAM.ground_truth.plan]
    assert gt == [["drusen"], ["exudates"], ["hemorrhage"], ["scar", "others"]]


def test_mapping_coverage_and_reuse_checks():
    src = LesionSchema("s", ("a", "b", "c"))
    tgt = LesionSchema("t", ("x", "y"))
    with pytest.raises(SchemaError, match="not covered"):
        SchemaMapping(src, tgt, direct=(("a", "x"),))
    with pytest.raises(SchemaError, match="more than once"):
        SchemaMapping(src, tgt, direct=(("a", "x"),), pooled=(("y", ("a", "b")),))
    with pytest.raises(SchemaError, match="covered twice"):
        SchemaMapping(src, tgt, direct=(("a", "x"), ("b", "x")), pooled=(("y", ("c",)),))
    with pytest.raises(SchemaError, match="unknown lesion"):
        SchemaMapping(src, tgt, direct=(("zzz", "x"),), pooled=(("y", ("c",)),))


def test_cross_mapping_json_round_trip(tmp_path):
    p = tmp_path / "m.json"
    p.write_text(json.dumps(AMDLESIONS_TO_ADAM.to_dict()))
    back = CrossDatasetMapping.load(p)
    assert back == AMDLESIONS_TO_ADAM
    assert back.evaluation_schema == ADAM_EVAL


def test_find_mapping():
    assert find_mapping("amdlesions", "adam") is AMDLESIONS_TO_ADAM
    with pytest.raises(SchemaError):
        find_mapping("adam", "amdlesions")
