import json

import numpy as np
import pytest
from PIL import Image

from lesionnet.checkpoint import Checkpoint
from lesionnet.export import export_image_maps, probability_png, read_probability_png
from lesionnet.model import ArchConfig, ModelVariant
from lesionnet.training import init_parameters


def test_probability_png_roundtrip(tmp_path):
    p = np.array([[0.0, 0.5], [1.0, 0.123456]])
    path = probability_png(p, tmp_path / "p.png")
    with Image.open(path) as im:
        assert np.asarray(im).dtype == np.uint16
    assert np.abs(read_probability_png(path) - p).max() <= 0.5 / 65535 + 1e-12


def _ck(variant, schema):
    m = init_parameters(ArchConfig.reduced(variant, len(schema.lesions), 8), "random", seed=0)
    return Checkpoint.from_model(m, schema, config={"train": {"normalization": "unit", "target_width": 48,
                                                              "resize_above": 10**9}})


def test_export_writes_n_plus_two_files(tiny_phantom, tmp_path):
    manifest, _ = tiny_phantom
    s = manifest.samples[0]
    ck = _ck(ModelVariant.AL_MAX, manifest.schema)
    meta = export_image_maps(ck, s.image_path, tmp_path)
    files = sorted(p.name for p in tmp_path.iterdir())
    n = len(manifest.schema.lesions)
    assert len(files) == n + 2
    assert meta["channels"] == list(manifest.schema.lesions)
    assert meta["map_size"] == [3, 3] and meta["stride"] == 16
    assert json.loads((tmp_path / f"{s.image_path.stem}.json").read_text())["overlay"] == meta["overlay"]
    m = read_probability_png(tmp_path / meta["map_files"][0])
    assert m.shape == (3, 3) and 0 <= m.min() and m.max() <= 1


def test_export_rejects_aonly(tiny_phantom, tmp_path):
    manifest, _ = tiny_phantom
    with pytest.raises(ValueError, match="no lesion outputs"):
        export_image_maps(_ck(ModelVariant.A_ONLY, manifest.schema), manifest.samples[0].image_path, tmp_path)
