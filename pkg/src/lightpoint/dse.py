"""Distance-aware semantic enhancement.

A four-layer foreground/background branch produces a per-point probability
and intermediate semantic features; a two-layer branch maps ``(|x|, |y|)``
to a distance factor ``d``. The focal-style loss

    loss_i = -d_i * (1 - p_t,i) ** (1 / d_i) * log(p_t,i)

is averaged over points, and the enhanced feature is the concatenation of
the geometric features with the semantic features.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import LengthMismatch, ShapeMismatch
from .params import Linear, ModelParams, mlp

D_MIN = 0.05
D_MAX = 1.0
DIST_HIDDEN = 8


@dataclass
class DseParams:
    seg: list                      # four Linear layers: C -> C -> C/2 -> C/4 -> 1
    dist: Optional[list] = None    # two Linear layers: 2 -> 8 -> 2, or None when d is fixed at 1

    @classmethod
    def create(cls, params: ModelParams, width: int, use_distance: bool = True, prefix: str = "dse"):
        if width % 4:
            raise ShapeMismatch(f"semantic branch width {width} must be divisible by 4")
        widths = (width, width, width // 2, width // 4, 1)
        seg = [Linear.create(params, f"{prefix}.seg.l{i}", widths[i], widths[i + 1]) for i in range(4)]
        dist = None
        if use_distance:
            dist = [Linear.create(params, f"{prefix}.dist.l0", 2, DIST_HIDDEN),
                    Linear.create(params, f"{prefix}.dist.l1", DIST_HIDDEN, 2)]
        return cls(seg, dist)

    @property
    def in_dim(self):
        return self.seg[0].w.shape[0]

    @property
    def size(self):
        return sum(l.size for l in self.seg) + sum(l.size for l in (self.dist or ()))


@dataclass
class DseOutput:
    fg_prob: Tensor        # M x 1
    sem_features: Tensor   # M x C/4
    d: Tensor              # M x 1


def distance_softmax(params: DseParams, points) -> Tensor:
    """Row-softmax output (M x 2) of the distance branch on ``(|x|, |y|)``."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ShapeMismatch(f"points must be M x 3, got {pts.shape}")
    return mlp(params.dist, ad.const(np.abs(pts[:, :2])), ad.softmax_rows)


def distance_factor(params: DseParams, points) -> Tensor:
    """Per-point distance factor (M x 1), clamped to ``[D_MIN, D_MAX]``.
    Without a distance branch it is the constant 1."""
    if params.dist is None:
        return ad.const(np.ones((np.asarray(points).shape[0], 1)))
    soft = distance_softmax(params, points)
    first = ad.matmul(soft, ad.const(np.array([[1.0], [0.0]])))
    return ad.clamp(first, D_MIN, D_MAX)


def semantic_branch(params: DseParams, geo_features) -> tuple:
    """``(fg_prob, sem_features)``: sigmoid of the last layer (M x 1) and the
    activations feeding it (M x C/4)."""
    x = ad.const(geo_features)
    if x.shape[1] != params.in_dim:
        raise ShapeMismatch(f"semantic branch expects width {params.in_dim}, got {x.shape[1]}")
    sem = mlp(params.seg[:3], x, ad.relu)
    prob = ad.sigmoid(params.seg[3](sem))
    return prob, sem


def true_class_prob(fg_prob, fg_labels) -> Tensor:
    """``p_t``: the probability of the true class, ``p`` for foreground
    and ``1 - p`` for background."""
    p = ad.const(fg_prob)
    y = np.asarray(fg_labels, dtype=np.float64).reshape(-1, 1)
    if y.shape[0] != p.shape[0]:
        raise LengthMismatch(f"{y.shape[0]} labels for {p.shape[0]} probabilities")
    ones = ad.const(np.ones_like(y))
    return ad.add(ad.hadamard(ad.const(y), p), ad.hadamard(ad.const(1.0 - y), ad.sub(ones, p)))


def focal_terms(p_t, d) -> Tensor:
    """Per-point loss ``-d (1 - p_t)^(1/d) log p_t`` (M x 1)."""
    p_t, d = ad.const(p_t), ad.const(d)
    if p_t.shape != d.shape:
        raise LengthMismatch(f"p_t shape {p_t.shape} vs d shape {d.shape}")
    ones = ad.const(np.ones(p_t.shape))
    inv_d = ad.pow_elem(d, ad.const(-np.ones(d.shape)))
    weight = ad.hadamard(d, ad.pow_elem(ad.sub(ones, p_t), inv_d))
    return ad.scalar_mul(ad.hadamard(weight, ad.log(p_t)), -1.0)


def distance_focal_loss(fg_prob, fg_labels, d) -> Tensor:
    """Mean distance-modulated focal loss over points (1 x 1)."""
    p = ad.const(fg_prob)
    d = ad.const(d)
    if p.shape[0] != d.shape[0]:
        raise LengthMismatch(f"{p.shape[0]} probabilities vs {d.shape[0]} distance factors")
    return ad.mean_reduce(focal_terms(true_class_prob(p, fg_labels), d))


def dse_forward(params: DseParams, geo_features, points) -> DseOutput:
    prob, sem = semantic_branch(params, geo_features)
    return DseOutput(prob, sem, distance_factor(params, points))


def dse_enhance(geo_features, points, params: DseParams, out: Optional[DseOutput] = None) -> Tensor:
    """``concat(f_g, sem_features)``: M x (C + C/4)."""
    geo = ad.const(geo_features)
    if np.asarray(points).shape[0] != geo.shape[0]:
        raise ShapeMismatch("points and features disagree in length")
    if out is None:
        _, sem = semantic_branch(params, geo)
    else:
        sem = out.sem_features
    return ad.concat_cols(geo, sem)
