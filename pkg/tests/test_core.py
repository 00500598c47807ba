import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from lightpoint.core import EncoderConfig, PointCloud, center_and_scale, validate
from lightpoint.errors import (
    ConfigError, EmptyCloud, LabelLengthMismatch, NegativeLabel, NonFiniteCoordinate,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def test_single_point_is_valid():
    validate(PointCloud(np.zeros((1, 3))))


def test_nan_reports_index():
    pts = np.zeros((5, 3))
    pts[3, 1] = np.nan
    with pytest.raises(NonFiniteCoordinate) as exc:
        validate(PointCloud(pts))
    assert exc.value.index == 3


def test_label_length_mismatch():
    with pytest.raises(LabelLengthMismatch):
        validate(PointCloud(np.zeros((4, 3)), labels=[0, 1, 2]))


def test_empty_and_negative_label():
    with pytest.raises(EmptyCloud):
        validate(PointCloud(np.zeros((0, 3))))
    with pytest.raises(NegativeLabel):
        validate(PointCloud(np.zeros((2, 3)), labels=[0, -1]))


def test_cloud_is_immutable_copy():
    src = np.ones((3, 3))
    pc = PointCloud(src)
    src[0, 0] = 5.0
    assert pc.points[0, 0] == 1.0
    with pytest.raises(ValueError):
        pc.points[0, 0] = 2.0


@given(
    n=st.integers(0, 6),
    n_labels=st.integers(0, 6),
    has_labels=st.booleans(),
    bad_value=st.sampled_from([None, np.nan, np.inf, -np.inf]),
    neg=st.booleans(),
)
def test_validate_accepts_exactly_valid_clouds(n, n_labels, has_labels, bad_value, neg):
    pts = np.arange(n * 3, dtype=float).reshape(n, 3)
    if bad_value is not None and n:
        pts[n - 1, 0] = bad_value
    labels = None
    if has_labels:
        labels = np.arange(n_labels)
        if neg and n_labels:
            labels[0] = -1
    should_pass = (
        n >= 1
        and (bad_value is None)
        and (not has_labels or (n_labels == n and not (neg and n_labels)))
    )
    pc = PointCloud(pts, labels)
    if should_pass:
        validate(pc)
    else:
        with pytest.raises(ValueError):
            validate(pc)


def test_center_and_scale_symmetric_pair():
    out = center_and_scale(PointCloud([[2.0, 0, 0], [-2.0, 0, 0]]))
    np.testing.assert_allclose(out.points, [[1, 0, 0], [-1, 0, 0]], atol=1e-15)


def test_center_and_scale_repeated_point():
    out = center_and_scale(PointCloud(np.tile([3.0, -1.0, 2.0], (7, 1))))
    assert np.all(out.points == 0.0)


@given(arrays(np.float64, st.tuples(st.integers(2, 40), st.just(3)), elements=finite))
def test_center_and_scale_properties(pts):
    out = center_and_scale(PointCloud(pts))
    if np.ptp(pts, axis=0).max() < 1e-6:
        return
    np.testing.assert_allclose(out.points.mean(axis=0), 0.0, atol=1e-9)
    assert abs(np.linalg.norm(out.points, axis=1).max() - 1.0) < 1e-9
    again = center_and_scale(out)
    np.testing.assert_allclose(again.points, out.points, atol=1e-9)


def test_labels_survive_normalization():
    pc = PointCloud(np.random.default_rng(0).normal(size=(10, 3)), labels=np.arange(10))
    assert np.array_equal(center_and_scale(pc).labels, np.arange(10))


def test_encoder_config_rules():
    cfg = EncoderConfig()
    assert cfg.widths() == [36, 72, 144, 288]
    assert EncoderConfig(embed_dim=4, stages=((8, 4),)).out_dim == 8
    with pytest.raises(ConfigError):
        EncoderConfig(stages=((64, 12), (64, 12)))
    with pytest.raises(ConfigError):
        EncoderConfig(stages=((64, 2),))
    with pytest.raises(ConfigError):
        EncoderConfig(aggregation="sum")
    with pytest.raises(ConfigError):
        EncoderConfig(stages=((300, 12),)).validate_for(256)
    with pytest.raises(ConfigError):
        EncoderConfig(stages=((16, 12), (8, 20))).validate_for(256)
    assert EncoderConfig.default_for(256).stages == ((128, 12), (64, 12), (32, 12))
    assert EncoderConfig(use_normal=False).branches() == ("s", "c")
