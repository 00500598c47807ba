import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lightpoint import autodiff as ad
from lightpoint.core import EncoderConfig
from lightpoint.errors import BadLabel, LengthMismatch, ShapeMismatch
from lightpoint.heads import (
    Adam, ClassifierHead, classify, compute_metrics, cross_entropy, feature_propagate,
    interpolation_matrix, optimizer_step, scene_metrics, shape_iou,
)
from lightpoint.mge import StageOutput
from lightpoint.params import ModelParams


def head(width=8, k=3, seed=0):
    return ClassifierHead.create(ModelParams(seed), width, k)


def test_classify_zero_head(rng):
    h = head()
    for l in h.layers:
        l.w.value[:] = 0
        l.b.value[:] = 0
    out = classify(StageOutput(np.zeros((4, 3)), ad.const(rng.normal(size=(4, 8)))), h)
    assert np.array_equal(out.value, np.zeros((1, 3)))


def test_classify_single_center_and_oracle(rng):
    h = head(seed=4)
    f = rng.normal(size=(1, 8))
    direct = h(ad.const(f)).value
    np.testing.assert_array_equal(classify(StageOutput(np.zeros((1, 3)), ad.const(f)), h).value, direct)
    f = rng.normal(size=(6, 8))
    pooled = f.max(axis=0, keepdims=True)
    l0, l1 = h.layers
    want = np.maximum(pooled @ l0.w.value + l0.b.value, 0) @ l1.w.value + l1.b.value
    np.testing.assert_allclose(classify(StageOutput(np.zeros((6, 3)), ad.const(f)), h).value, want, atol=1e-12)
    with pytest.raises(ShapeMismatch):
        classify(StageOutput(np.zeros((6, 3)), ad.const(np.zeros((6, 5)))), h)


def test_propagate_exact_copy_and_equidistant(rng):
    centers = np.array([[1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0], [5.0, 5, 5]])
    feats = rng.normal(size=(4, 3))
    out = feature_propagate(StageOutput(centers, ad.const(feats)), np.array([[0, 1.0, 0], [0, 0, 0]])).value
    np.testing.assert_array_equal(out[0], feats[1])
    np.testing.assert_allclose(out[1], feats[:3].mean(axis=0), atol=1e-12)


def test_propagate_matches_loop_and_skip(rng):
    centers = rng.normal(size=(7, 3))
    feats = rng.normal(size=(7, 4))
    fine = rng.normal(size=(10, 3))
    skip = rng.normal(size=(10, 2))
    out = feature_propagate(StageOutput(centers, ad.const(feats)), fine, skip).value
    for i, p in enumerate(fine):
        d = np.linalg.norm(centers - p, axis=1)
        nn = np.argsort(d)[:3]
        w = 1 / (d[nn] + 1e-8)
        want = (w[:, None] * feats[nn]).sum(axis=0) / w.sum()
        np.testing.assert_allclose(out[i, :4], want, atol=1e-10)
    np.testing.assert_array_equal(out[:, 4:], skip)
    np.testing.assert_allclose(interpolation_matrix(centers, fine).sum(axis=1), 1.0, atol=1e-12)


def test_cross_entropy_values(rng):
    assert cross_entropy(np.zeros((1, 4)), [2]).item() == pytest.approx(math.log(4), abs=1e-12)
    logits = np.zeros((1, 4))
    logits[0, 1] = 50.0
    assert cross_entropy(logits, [1]).item() <= 1e-9
    z = rng.normal(size=(5, 3))
    y = rng.integers(0, 3, size=5)
    want = np.mean([-(z[i, y[i]] - np.log(np.exp(z[i]).sum())) for i in range(5)])
    assert cross_entropy(z, y).item() == pytest.approx(want, abs=1e-12)
    with pytest.raises(BadLabel):
        cross_entropy(z, [0, 1, 2, 3, 0])
    with pytest.raises(LengthMismatch):
        cross_entropy(z, [0, 1])


def test_metrics_perfect_and_hand_confusion():
    m = compute_metrics([0, 1, 2, 1], [0, 1, 2, 1])
    assert m.overall_accuracy == 1.0 and m.mean_class_accuracy == 1.0
    m = compute_metrics([0, 0, 0, 0], [0, 0, 1, 1])
    assert m.overall_accuracy == 0.5 and m.mean_class_accuracy == 0.5
    m = compute_metrics([3, 3], [3, 3])
    assert m.overall_accuracy == 1.0 and m.mean_class_accuracy == 1.0
    with pytest.raises(LengthMismatch):
        compute_metrics([0, 1], [0])


def test_segment_metrics():
    class_parts = {0: [0, 1], 1: [2, 3, 4]}
    preds = [np.array([0, 0, 1, 1]), np.array([2, 2, 3, 3]), np.array([2, 3, 3, 2])]
    gts = [np.array([0, 0, 1, 1]), np.array([2, 2, 3, 2]), np.array([2, 3, 3, 3])]
    m = compute_metrics(preds, gts, "segment", [0, 1, 1], class_parts)
    s1 = np.mean([2 / 3, 1 / 2, 1.0])       # part 4 absent from both: IoU 1
    s2 = np.mean([1 / 2, 2 / 3, 1.0])
    assert m.inst_miou == pytest.approx(np.mean([1.0, s1, s2]))
    assert m.cls_miou == pytest.approx(np.mean([1.0, np.mean([s1, s2])]))
    assert m.overall_accuracy == pytest.approx(10 / 12)
    assert shape_iou(np.array([0, 0]), np.array([1, 1]), [0, 1]) == 0.0


@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=40))
def test_metrics_bounds(pairs):
    p, g = map(np.array, zip(*pairs))
    m = compute_metrics(p, g)
    assert 0 <= m.overall_accuracy <= 1 and 0 <= m.mean_class_accuracy <= 1
    assert (m.overall_accuracy == 1.0) == bool(np.all(p == g))


def test_scene_metrics():
    pts = np.array([[1.0, 0, 0], [2.0, 0, 0], [3.0, 0, 0], [0, 0, 0], [9.0, 0, 0], [10.0, 0, 0]])
    gt = np.array([1, 1, 1, 0, 1, 1])
    pred = np.array([1, 1, 0, 1, 1, 0])
    m = scene_metrics([pred], [gt], [pts]).as_dict()
    assert m["fg_iou"] == pytest.approx(3 / 6)
    assert m["fg_recall"] == pytest.approx(3 / 5)
    # far tercile of the foreground ranges {1,2,3,9,10}: 9 and 10
    assert m["far_recall"] == pytest.approx(0.5)


def quad_params(x0):
    return {"x": ad.Tensor(np.array(x0, dtype=float), requires_grad=True)}


def test_adam_zero_grad_and_first_step():
    p = quad_params([[1.0, -2.0]])
    opt = Adam()
    opt.step(p, {"x": np.zeros((1, 2))})
    assert np.abs(p["x"].value - [[1.0, -2.0]]).max() <= 1e-12
    p = quad_params([[1.0, -2.0]])
    Adam(lr=1e-3).step(p, {"x": np.array([[0.7, -3.0]])})
    np.testing.assert_allclose(p["x"].value, [[1.0 - 1e-3, -2.0 + 1e-3]], atol=1e-10)
    with pytest.raises(ShapeMismatch):
        Adam().step(p, {"x": np.zeros((2, 1))})


def test_adam_descends_quadratic():
    p = quad_params([[3.0]])
    opt = Adam(lr=0.1)
    losses = []
    for _ in range(10):
        x = p["x"].value
        losses.append(float((x ** 2).sum()))
        optimizer_step(opt, p, {"x": 2 * x})
    assert all(a > b for a, b in zip(losses, losses[1:]))


def test_adam_one_step_threshold():
    # for a positive-definite quadratic the first step moves each coordinate
    # by lr against its gradient sign, so any lr < 2|x| decreases the loss
    for lr in (1e-4, 1e-2, 0.5, 1.9):
        p = quad_params([[1.0, -1.0]])
        before = float((p["x"].value ** 2).sum())
        Adam(lr=lr).step(p, {"x": 2 * p["x"].value})
        assert float((p["x"].value ** 2).sum()) < before
