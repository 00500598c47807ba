"""Point-cloud data model, validation and canonical preprocessing."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (
    ConfigError,
    EmptyCloud,
    LabelLengthMismatch,
    NegativeLabel,
    NonFiniteCoordinate,
    PointCloudError,
)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PointCloud:
    """N x 3 coordinates with optional per-point integer labels and a
    foreground mask. Arrays are copied and made read-only on construction.

    Construction does not validate; call :func:`validate` (loaders and
    generators do).
    """

    points: np.ndarray
    labels: Optional[np.ndarray] = None
    fg_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1 and pts.size == 3:
            pts = pts.reshape(1, 3)
        if pts.ndim != 2 or (pts.size and pts.shape[1] != 3):
            raise PointCloudError(f"points must be N x 3, got shape {pts.shape}")
        object.__setattr__(self, "points", _frozen(pts.reshape(-1, 3)))
        if self.labels is not None:
            object.__setattr__(self, "labels", _frozen(np.asarray(self.labels, dtype=np.int64).ravel()))
        if self.fg_mask is not None:
            object.__setattr__(self, "fg_mask", _frozen(np.asarray(self.fg_mask, dtype=bool).ravel()))

    def __len__(self):
        return self.points.shape[0]

    def with_points(self, points) -> "PointCloud":
        return PointCloud(points, self.labels, self.fg_mask)

    def permuted(self, order) -> "PointCloud":
        order = np.asarray(order)
        return PointCloud(
            self.points[order],
            None if self.labels is None else self.labels[order],
            None if self.fg_mask is None else self.fg_mask[order],
        )


def validate(pc: PointCloud) -> None:
    """Raise if ``pc`` violates a PointCloud invariant, return None otherwise."""
    n = pc.points.shape[0]
    if n < 1:
        raise EmptyCloud("point cloud has no points")
    bad = ~np.isfinite(pc.points).all(axis=1)
    if bad.any():
        raise NonFiniteCoordinate(int(np.argmax(bad)))
    if pc.labels is not None:
        if pc.labels.shape[0] != n:
            raise LabelLengthMismatch(f"{pc.labels.shape[0]} labels for {n} points")
        if (pc.labels < 0).any():
            raise NegativeLabel("labels must be non-negative")
    if pc.fg_mask is not None and pc.fg_mask.shape[0] != n:
        raise LabelLengthMismatch(f"{pc.fg_mask.shape[0]} mask entries for {n} points")


def center_and_scale(pc: PointCloud) -> PointCloud:
    """Translate the centroid to the origin and scale the farthest point to
    norm 1. A cloud whose points all coincide maps to all zeros."""
    validate(pc)
    pts = pc.points - pc.points.mean(axis=0)
    radius = np.sqrt((pts * pts).sum(axis=1)).max()
    if radius <= 1e-12:
        pts = np.zeros_like(pts)
    else:
        pts = pts / radius
    return pc.with_points(pts)


AGGREGATIONS = ("maa", "concat")


@dataclass(frozen=True)
class EncoderConfig:
    """Encoder hyperparameters and ablation switches.

    ``stages`` is a sequence of ``(sample_count, neighbor_count)`` pairs; an
    empty sequence means no geometric encoding (coordinate lift only).
    """

    embed_dim: int = 36
    stages: tuple = ((128, 12), (64, 12), (32, 12))
    use_normal: bool = True
    use_curvature: bool = True
    aggregation: str = "maa"
    use_dse: bool = False

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple((int(m), int(k)) for m, k in self.stages))
        if self.embed_dim < 1:
            raise ConfigError("embed_dim must be positive")
        if self.aggregation not in AGGREGATIONS:
            raise ConfigError(f"aggregation must be one of {AGGREGATIONS}, got {self.aggregation!r}")
        counts = [m for m, _ in self.stages]
        if any(b >= a for a, b in zip(counts, counts[1:])):
            raise ConfigError("stage sample counts must be strictly decreasing")
        for m, k in self.stages:
            if m < 1:
                raise ConfigError("stage sample counts must be positive")
            if k < 3:
                raise ConfigError("neighbor counts must be at least 3")

    @classmethod
    def default_for(cls, n_points: int, **kwargs) -> "EncoderConfig":
        """Three stages at N/2, N/4, N/8 with k = 12."""
        stages = tuple((n_points // d, 12) for d in (2, 4, 8))
        return cls(stages=stages, **kwargs)

    def validate_for(self, n_points: int) -> None:
        prev = n_points
        for s, (m, k) in enumerate(self.stages):
            if m > prev:
                raise ConfigError(f"stage {s}: sample count {m} exceeds its input size {prev}")
            if k > prev:
                raise ConfigError(f"stage {s}: neighbor count {k} exceeds its input size {prev}")
            prev = m

    def widths(self) -> list:
        """Channel width after the lift and after each stage."""
        out = [self.embed_dim]
        for _ in self.stages:
            out.append(2 * out[-1])
        return out

    @property
    def out_dim(self) -> int:
        return self.widths()[-1]

    def branches(self) -> tuple:
        names = ["s"]
        if self.use_normal:
            names.append("n")
        if self.use_curvature:
            names.append("c")
        return tuple(names)
