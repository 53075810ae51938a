import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lesionnet.acceptance import pairwise_auc
from lesionnet.evaluation.roc import ScoredSet, UndefinedAUC, merge_fold_curves, roc_curve, trapezoid_auc


def test_perfect_and_inverted():
    assert roc_curve(([0.9, 0.8, 0.3, 0.2], [1, 1, 0, 0])).auc == 1.0
    assert roc_curve(([0.9, 0.8, 0.3, 0.2], [0, 0, 1, 1])).auc == 0.0


def test_tie_example():
    c = roc_curve(([0.8, 0.5, 0.5, 0.1], [1, 1, 0, 0]))
    assert c.auc == pytest.approx(0.875, abs=1e-12)
    assert c.points == [(0.0, 0.0), (0.0, 0.5), (0.5, 1.0), (1.0, 1.0)]


def test_single_class_undefined():
    with pytest.raises(UndefinedAUC):
        roc_curve(([0.1, 0.2], [1, 1]))


def test_invalid_inputs():
    with pytest.raises(ValueError):
        ScoredSet([0.1], [2])
    with pytest.raises(ValueError):
        ScoredSet([0.1, 0.2], [1])
    with pytest.raises(ValueError):
        ScoredSet([float("nan")], [1])


scored = st.integers(2, 120).flatmap(lambda n: st.tuples(
    st.lists(st.integers(0, 6).map(lambda k: k / 6), min_size=n, max_size=n),
    st.lists(st.integers(0, 1), min_size=n, max_size=n),
)).filter(lambda t: 0 < sum(t[1]) < len(t[1]))


@settings(max_examples=150, deadline=None)
@given(scored)
def test_trapezoid_equals_pairwise(data):
    s, y = data
    c = roc_curve((s, y))
    assert abs(c.auc - pairwise_auc(s, y)) <= 1e-9
    assert c.points[0] == (0.0, 0.0) and c.points[-1] == (1.0, 1.0)
    assert np.all(np.diff(c.fpr) >= 0) and np.all(np.diff(c.tpr) >= 0)
    assert c.auc == pytest.approx(trapezoid_auc(c.fpr, c.tpr))


@settings(max_examples=60, deadline=None)
@given(scored)
def test_strictly_increasing_transform_invariance(data):
    s, y = data
    a = roc_curve((s, y))
    b = roc_curve((np.exp(3 * np.asarray(s)) / 30, y))
    assert a.points == b.points and a.auc == b.auc


def test_merge_identity_and_dedup():
    c = roc_curve(([0.8, 0.5, 0.5, 0.1], [1, 1, 0, 0]))
    assert merge_fold_curves([c]).points == c.points
    assert merge_fold_curves([c, c]).points == c.points
    with pytest.raises(ValueError):
        merge_fold_curves([])


def test_merge_random_curves_sorted():
    rng = np.random.default_rng(0)
    for _ in range(50):
        cs = []
        for _ in range(int(rng.integers(2, 5))):
            n = int(rng.integers(4, 40))
            y = rng.integers(0, 2, n)
            y[:2] = (0, 1)
            cs.append(roc_curve((rng.random(n).round(2), y)))
        m = merge_fold_curves(cs)
        assert len(m.points) <= sum(len(c.points) for c in cs)
        assert m.points == sorted(set(m.points))
