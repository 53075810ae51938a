import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lesionnet.data.manifest import ImageSample
from lesionnet.data.transforms import (
    AugmentConfig,
    AugmentParams,
    apply_augment,
    augment,
    augment_rng,
    normalize,
    pad_to_multiple,
    resize_to_width,
    sample_augment_params,
)


def sample(h, w, gt=None, seed=0):
    px = np.random.default_rng(seed).integers(0, 256, (h, w, 3), dtype=np.uint8)
    return ImageSample("img", "p", 1, None, np.array([1, 0]), {}, px, gt)


def test_resize_reference_geometry():
    out = resize_to_width(sample(1934, 2576), 720)
    # round(1934 * 720 / 2576) = 541, padded to 544
    assert out.pixels.shape == (544, 720, 3)
    assert not out.pixels[541:].any()


def test_square_720_only_checks_padding():
    s = sample(720, 720)
    out = resize_to_width(s, 720)
    assert np.array_equal(out.pixels, s.pixels)


def test_gt_blob_centroid_follows_geometry():
    h, w = 600, 800
    gt = np.zeros((h, w), bool)
    yy, xx = np.mgrid[0:h, 0:w]
    cy, cx = 210.0, 530.0
    gt[(yy - cy) ** 2 + (xx - cx) ** 2 <= 40**2] = True
    out = resize_to_width(sample(h, w, {"drusen": gt}), 720)
    m = out.gt_maps["drusen"]
    s = 720 / w
    # pixel centres map as x' = (x + 0.5) * s - 0.5
    want = ((cy + 0.5) * s - 0.5, (cx + 0.5) * s - 0.5)
    got = np.argwhere(m).mean(axis=0)
    assert np.hypot(got[0] - want[0], got[1] - want[1]) <= 1.0


def test_zero_area_rejected():
    with pytest.raises(ValueError, match="zero-area"):
        resize_to_width(sample(0, 10), 720)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 300), st.integers(1, 300), st.integers(16, 256))
def test_resize_idempotent(h, w, target):
    once = resize_to_width(sample(h, w), target)
    twice = resize_to_width(once, target)
    assert np.array_equal(once.pixels, twice.pixels)
    assert once.pixels.shape[0] % 16 == 0 and once.pixels.shape[1] % 16 == 0


def test_pad_to_multiple_black():
    out = pad_to_multiple(sample(17, 33))
    assert out.pixels.shape == (32, 48, 3)
    assert not out.pixels[17:].any() and not out.pixels[:, 33:].any()


def test_identity_params_reproduce_input():
    gt = {"a": np.eye(32, dtype=bool)}
    s = sample(32, 32, gt)
    out = apply_augment(s, AugmentParams())
    assert np.array_equal(out.pixels, s.pixels)
    assert np.array_equal(out.gt_maps["a"], gt["a"])


def test_hflip_only_reverses_columns_and_is_an_involution():
    s = sample(16, 24)
    once = apply_augment(s, AugmentParams(hflip=True))
    assert np.array_equal(once.pixels, s.pixels[:, ::-1])
    assert np.array_equal(apply_augment(once, AugmentParams(hflip=True)).pixels, s.pixels)


def test_sampled_parameters_within_ranges():
    cfg = AugmentConfig()
    rng = np.random.default_rng(0)
    draws = [sample_augment_params(rng, cfg) for _ in range(1000)]
    for p in draws:
        assert all(cfg.channel_scale[0] <= c <= cfg.channel_scale[1] for c in p.channel_scale)
        assert cfg.brightness[0] <= p.brightness <= cfg.brightness[1]
        assert cfg.rotation_deg[0] <= p.rotation_deg <= cfg.rotation_deg[1]
        assert cfg.scale[0] <= p.scale <= cfg.scale[1]
        assert cfg.shear_deg[0] <= p.shear_deg <= cfg.shear_deg[1]
    flips = np.mean([p.hflip for p in draws])
    assert 0.45 < flips < 0.55


def test_augment_preserves_labels_and_shape():
    gt = {"a": np.zeros((48, 64), bool)}
    s = sample(48, 64, gt)
    for seed in range(10):
        out = augment(s, np.random.default_rng(seed))
        assert out.pixels.shape == s.pixels.shape
        assert out.gt_maps["a"].shape == gt["a"].shape
        assert out.diagnosis == s.diagnosis and np.array_equal(out.lesion_flags, s.lesion_flags)


def test_augment_rng_is_order_independent():
    a = augment_rng(1, 2, "img_7").random(4)
    augment_rng(1, 2, "img_8").random(4)
    assert np.array_equal(a, augment_rng(1, 2, "img_7").random(4))
    assert not np.array_equal(a, augment_rng(1, 3, "img_7").random(4))


def test_normalize_modes():
    px = np.full((2, 2, 3), 255, np.uint8)
    assert np.allclose(normalize(px, "unit"), 1.0)
    x = normalize(px, "imagenet")
    assert x.shape == (3, 2, 2)
    assert np.isclose(x[0, 0, 0], (1 - 0.485) / 0.229)
