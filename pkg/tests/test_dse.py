import math

import numpy as np
import pytest

from lightpoint import autodiff as ad
from lightpoint.dse import (
    D_MAX, D_MIN, DseParams, distance_factor, distance_focal_loss, distance_softmax, dse_enhance,
    focal_terms, semantic_branch,
)
from lightpoint.errors import LengthMismatch, ShapeMismatch
from lightpoint.params import ModelParams


def make(width=8, seed=0, use_distance=True):
    return DseParams.create(ModelParams(seed), width, use_distance)


def zero(params):
    for layer in params.seg + (params.dist or []):
        layer.w.value[:] = 0.0
        layer.b.value[:] = 0.0
    return params


def mlp_oracle(layers, x, last):
    for i, l in enumerate(layers):
        x = x @ l.w.value + l.b.value
        if i + 1 < len(layers):
            x = np.maximum(x, 0.0)
    return last(x)


def focal_oracle(pt, d):
    return -d * (1.0 - pt) ** (1.0 / d) * math.log(pt)


def test_loss_closed_forms():
    half = np.array([[0.5]])
    assert distance_focal_loss(half, [1], np.array([[1.0]])).item() == pytest.approx(0.5 * math.log(2), abs=1e-9)
    v = distance_focal_loss(half, [1], np.array([[0.5]])).item()
    assert v == pytest.approx(-0.5 * 0.25 * math.log(0.5), abs=1e-9)
    assert v == pytest.approx(0.086643, abs=1e-6)
    for d in (0.05, 0.3, 1.0):
        assert distance_focal_loss(np.array([[1.0]]), [1], np.array([[d]])).item() <= 1e-5
        assert distance_focal_loss(np.array([[1.0 - 1e-7]]), [1], np.array([[d]])).item() <= 1e-5


def test_background_uses_complement():
    a = distance_focal_loss(np.array([[0.2]]), [0], np.array([[0.7]])).item()
    assert a == pytest.approx(focal_oracle(0.8, 0.7), abs=1e-12)


def test_loss_is_mean_over_points(rng):
    p = rng.uniform(0.05, 0.95, size=(6, 1))
    y = rng.integers(0, 2, size=6)
    d = rng.uniform(D_MIN, D_MAX, size=(6, 1))
    want = np.mean([focal_oracle(p[i, 0] if y[i] else 1 - p[i, 0], d[i, 0]) for i in range(6)])
    assert distance_focal_loss(p, y, d).item() == pytest.approx(want, abs=1e-12)


def test_monotonicity_grid():
    pt = np.linspace(0.01, 0.99, 100)
    d = np.linspace(D_MIN, D_MAX, 100)
    P, D = np.meshgrid(pt, d, indexing="ij")
    loss = focal_terms(P.reshape(-1, 1), D.reshape(-1, 1)).value.reshape(100, 100)
    assert np.all(np.diff(loss, axis=1) > 0)   # increasing in d
    assert np.all(np.diff(loss, axis=0) < 0)   # decreasing in p_t
    assert np.all(loss >= 0)


def test_length_mismatch():
    with pytest.raises(LengthMismatch):
        distance_focal_loss(np.full((3, 1), 0.5), [1, 0], np.ones((3, 1)))
    with pytest.raises(LengthMismatch):
        distance_focal_loss(np.full((3, 1), 0.5), [1, 0, 1], np.ones((2, 1)))


def test_distance_factor_zero_params_is_half(rng):
    p = zero(make())
    np.testing.assert_allclose(distance_factor(p, rng.normal(size=(5, 3)) * 20).value, 0.5)


def test_distance_softmax_range_and_oracle(rng):
    p = make(seed=3)
    pts = rng.normal(size=(50, 3)) * 3
    soft = distance_softmax(p, pts).value
    assert np.all((soft > 0) & (soft < 1))
    # far away the softmax may saturate in floating point, but stays in range
    far = distance_softmax(p, pts * 30).value
    assert np.all((far >= 0) & (far <= 1))
    np.testing.assert_allclose(soft.sum(axis=1), 1.0, atol=1e-12)

    def softmax(z):
        e = np.exp(z - z.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    np.testing.assert_allclose(soft, mlp_oracle(p.dist, np.abs(pts[:, :2]), softmax), atol=1e-12)
    d = distance_factor(p, pts).value
    np.testing.assert_allclose(d[:, 0], np.clip(soft[:, 0], D_MIN, D_MAX), atol=1e-12)
    with pytest.raises(ShapeMismatch):
        distance_softmax(p, np.zeros((3, 2)))


def test_distance_factor_only_uses_xy(rng):
    p = make(seed=4)
    pts = rng.normal(size=(8, 3))
    moved = pts.copy()
    moved[:, 2] += 100.0
    moved[:, :2] *= -1
    assert np.array_equal(distance_factor(p, pts).value, distance_factor(p, moved).value)


def test_without_distance_branch_d_is_one(rng):
    p = make(use_distance=False)
    assert p.dist is None
    assert np.array_equal(distance_factor(p, rng.normal(size=(4, 3))).value, np.ones((4, 1)))


def test_semantic_branch(rng):
    p = zero(make())
    prob, sem = semantic_branch(p, rng.normal(size=(5, 8)))
    np.testing.assert_allclose(prob.value, 0.5)
    assert np.array_equal(sem.value, np.zeros((5, 2)))
    p.seg[3].b.value[:] = 1e3
    prob, _ = semantic_branch(p, rng.normal(size=(5, 8)))
    assert np.all(np.abs(prob.value - 1.0) <= 1e-9)
    q = make(seed=9)
    x = rng.normal(size=(7, 8))
    prob, sem = semantic_branch(q, x)
    np.testing.assert_allclose(sem.value, mlp_oracle(q.seg[:3], x, lambda z: np.maximum(z, 0)), atol=1e-12)
    np.testing.assert_allclose(prob.value, mlp_oracle(q.seg, x, lambda z: 1 / (1 + np.exp(-z))), atol=1e-12)
    with pytest.raises(ShapeMismatch):
        semantic_branch(q, np.zeros((2, 6)))


def test_enhance(rng):
    geo = rng.normal(size=(6, 8))
    pts = rng.normal(size=(6, 3))
    out = dse_enhance(geo, pts, zero(make())).value
    assert out.shape == (6, 10)
    np.testing.assert_array_equal(out, np.hstack([geo, np.zeros((6, 2))]))
    q = make(width=16, seed=2)
    geo = rng.normal(size=(6, 16))
    out = dse_enhance(geo, pts, q).value
    assert out.shape == (6, 20)
    np.testing.assert_array_equal(out, np.hstack([geo, semantic_branch(q, geo)[1].value]))


def test_width_must_divide_by_four():
    with pytest.raises(ShapeMismatch):
        make(width=6)


def test_param_count():
    c = 16
    seg = c * c + c + c * 8 + 8 + 8 * 4 + 4 + 4 + 1
    dist = 2 * 8 + 8 + 8 * 2 + 2
    assert make(c).size == seg + dist
    assert make(c, use_distance=False).size == seg


def test_loss_gradients_wrt_prob_and_d(rng):
    p = ad.Tensor(rng.uniform(0.1, 0.9, size=(5, 1)), requires_grad=True)
    d = ad.Tensor(rng.uniform(0.2, 0.9, size=(5, 1)), requires_grad=True)
    y = rng.integers(0, 2, size=5)
    rep = ad.grad_check(lambda p, d: distance_focal_loss(p, y, d), [p, d])
    assert rep.max_rel_error <= 1e-4
