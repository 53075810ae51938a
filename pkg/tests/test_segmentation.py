import numpy as np
import pytest

from lesionnet.acceptance import pairwise_auc
from lesionnet.evaluation.segmentation import (
    cell_roi,
    downscale_gt,
    eval_segmentation,
    pointing_game,
    pointing_hit,
    segmentation_scored_set,
)


def test_downscale_examples():
    assert downscale_gt(np.ones((16, 16), bool)).tolist() == [[True]]
    g = np.zeros((32, 48), bool)
    g[20, 47] = True
    out = downscale_gt(g)
    assert out.shape == (2, 3) and out.sum() == 1 and out[1, 2]
    with pytest.raises(ValueError):
        downscale_gt(np.zeros((20, 32)))


def test_downscale_matches_block_scan_and_is_monotone():
    rng = np.random.default_rng(0)
    for _ in range(20):
        g = rng.random((64, 64)) < 0.01
        out = downscale_gt(g)
        for i in range(4):
            for j in range(4):
                assert out[i, j] == any(g[16 * i + a, 16 * j + b] for a in range(16) for b in range(16))
        more = g | (rng.random((64, 64)) < 0.01)
        assert np.all(downscale_gt(more) >= out)


def test_identical_map_gives_auc_one_constant_gives_half():
    g = np.zeros((4, 4), bool)
    g[1:3, 2] = True
    assert eval_segmentation([g.astype(float)], [g]).auc == 1.0
    assert eval_segmentation([np.full((4, 4), 0.3)], [g]).auc == 0.5


def test_roi_restriction_and_pooling_vs_pairwise():
    rng = np.random.default_rng(2)
    maps = [rng.random((6, 6)).round(2) for _ in range(5)]
    gts = [rng.random((6, 6)) < 0.2 for _ in range(5)]
    rois = [rng.random((6, 6)) < 0.8 for _ in range(5)]
    for g, r in zip(gts, rois):
        g[r.nonzero()[0][0], r.nonzero()[1][0]] = True
    st = segmentation_scored_set(maps, gts, rois)
    assert len(st) == sum(r.sum() for r in rois)
    s = np.concatenate([m[r] for m, r in zip(maps, rois)])
    y = np.concatenate([g[r] for g, r in zip(gts, rois)]).astype(int)
    assert abs(eval_segmentation(maps, gts, rois).auc - pairwise_auc(s.tolist(), y.tolist())) < 1e-9
    with pytest.raises(ValueError, match="no images"):
        eval_segmentation([], [])


def test_cell_roi_excludes_black_padding():
    px = np.zeros((32, 48, 3), np.uint8)
    px[:16, :16] = 120
    assert cell_roi(px).tolist() == [[True, False, False], [False, False, False]]


def test_pointing_rules():
    g = np.zeros((5, 5), bool)
    g[2, 2] = True
    m = np.zeros((5, 5))
    m[2, 2] = 1
    assert pointing_hit(m, g)
    m = np.zeros((5, 5))
    m[3, 3] = 1
    assert pointing_hit(m, g, dilation=1) and not pointing_hit(m, g, dilation=0)
    m = np.zeros((5, 5))
    m[4, 4] = 1
    assert not pointing_hit(m, g)
    r = pointing_game([m, g.astype(float), m], [g, g, np.zeros((5, 5), bool)])
    assert (r.hits, r.total) == (1, 2)
    with pytest.raises(ValueError, match="positive"):
        pointing_game([m], [np.zeros((5, 5), bool)])


def test_pointing_random_maps_hit_dilated_area_fraction():
    rng = np.random.default_rng(0)
    g = np.zeros((12, 12), bool)
    g[3, 4] = True
    g[8, 8] = True
    # dilated area: two disjoint 3x3 blocks = 18 of 144 cells
    r = pointing_game([rng.random((12, 12)) for _ in range(4000)], [g] * 4000, dilation=1)
    assert r.rate == pytest.approx(18 / 144, abs=0.02)
