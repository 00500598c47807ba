"""Multivariate geometric encoding.

Each stage samples centers with FPS, groups k neighbors, and aggregates
three per-center branches:

* spatial: ``max_j (concat(f_c, f_j) + PosE(dp_j)) * PosE(dp_j)`` with
  ``dp`` the neighborhood-standardized offsets,
* normal: ``PosE(pseudo-normal)``,
* curvature: ``PosE(pseudo-curvature)``,

combined by channel-wise scale-and-bias summation (``maa``) or by
concatenation followed by an affine projection (``concat``). A stage with
input width D emits 2D channels.

The non-learnable part of a stage (sampling, grouping, offsets, surface
descriptors) lives in :class:`StagePlan` so it can be computed once per
cloud and reused across epochs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .core import EncoderConfig, PointCloud
from .errors import ShapeMismatch
from .params import Linear, ModelParams
from .sampling import farthest_point_sample, knn_indices
from .surface import describe_batch

STD_FLOOR = 1e-5
BRANCHES = ("s", "n", "c")


class PosEncoder:
    """Two affine layers with relu between: m -> h -> C."""

    def __init__(self, w1, b1, w2, b2):
        self.w1, self.b1, self.w2, self.b2 = (ad.const(t) for t in (w1, b1, w2, b2))

    @classmethod
    def create(cls, params: ModelParams, prefix: str, in_dim: int, out_dim: int, hidden: Optional[int] = None):
        hidden = out_dim if hidden is None else hidden
        w1 = params.uniform(prefix + ".w1", (in_dim, hidden), in_dim)
        b1 = params.uniform(prefix + ".b1", (1, hidden), in_dim)
        w2 = params.uniform(prefix + ".w2", (hidden, out_dim), hidden)
        b2 = params.uniform(prefix + ".b2", (1, out_dim), hidden)
        return cls(w1, b1, w2, b2)

    @property
    def in_dim(self):
        return self.w1.shape[0]

    @property
    def out_dim(self):
        return self.w2.shape[1]


def pos_encode(enc: PosEncoder, v) -> Tensor:
    v = ad.const(v)
    if v.shape[1] != enc.in_dim:
        raise ShapeMismatch(f"PosE expects {enc.in_dim} input columns, got {v.shape[1]}")
    hidden = ad.relu(ad.affine(v, enc.w1, enc.b1))
    return ad.affine(hidden, enc.w2, enc.b2)


@dataclass
class MAAParams:
    alpha: dict
    beta: dict

    @classmethod
    def create(cls, params: ModelParams, prefix: str, width: int, branches) -> "MAAParams":
        alpha, beta = {}, {}
        for b in branches:
            alpha[b] = params.add(f"{prefix}.alpha_{b}", np.ones((1, width)))
            beta[b] = params.add(f"{prefix}.beta_{b}", np.zeros((1, width)))
        return cls(alpha, beta)


def maa_aggregate(params: MAAParams, f_s, f_n=None, f_c=None) -> Tensor:
    """``sum_i alpha_i * f_i + beta_i`` over the branches that are present
    (not None) and have parameters."""
    total = None
    for key, f in (("s", f_s), ("n", f_n), ("c", f_c)):
        if f is None or key not in params.alpha:
            continue
        f = ad.const(f)
        rows = f.shape[0]
        if params.alpha[key].shape[1] != f.shape[1]:
            raise ShapeMismatch(f"branch {key}: width {f.shape[1]} vs parameters {params.alpha[key].shape[1]}")
        term = ad.add(ad.hadamard(ad.broadcast_row(params.alpha[key], rows), f),
                      ad.broadcast_row(params.beta[key], rows))
        total = term if total is None else ad.add(total, term)
    if total is None:
        raise ShapeMismatch("maa_aggregate needs at least one branch")
    return total


def concat_aggregate(proj: Linear, f_s, f_n=None, f_c=None) -> Tensor:
    """Concatenate the present branches and project back with ``proj``."""
    parts = [ad.const(f) for f in (f_s, f_n, f_c) if f is not None]
    cat = ad.concat_cols(*parts)
    if cat.shape[1] != proj.w.shape[0]:
        raise ShapeMismatch(f"concat width {cat.shape[1]} vs projection input {proj.w.shape[0]}")
    return proj(cat)


def standardized_offsets(neighbor_points: np.ndarray, center_points: np.ndarray) -> np.ndarray:
    """Offsets to the center, standardized per neighborhood and coordinate.

    ``neighbor_points`` is (M, k, 3), ``center_points`` (M, 3).
    """
    off = neighbor_points - center_points[:, None, :]
    mean = off.mean(axis=1, keepdims=True)
    std = np.maximum(off.std(axis=1, keepdims=True), STD_FLOOR)
    return (off - mean) / std


@dataclass
class StagePlan:
    """Non-learnable geometry of one stage for one cloud."""

    center_idx: np.ndarray      # (M,)
    neighbor_idx: np.ndarray    # (M, k)
    centers: np.ndarray         # (M, 3)
    offsets: np.ndarray         # (M*k, 3) standardized
    normals: Optional[np.ndarray] = None      # (M, 3)
    curvatures: Optional[np.ndarray] = None   # (M, 3)

    @property
    def k(self):
        return self.neighbor_idx.shape[1]


def plan_stage(points: np.ndarray, m: int, k: int, surface: bool = True) -> StagePlan:
    points = np.asarray(points, dtype=np.float64)
    centers = farthest_point_sample(points, m)
    nbr = knn_indices(points, centers, k)
    grouped = points[nbr]
    offsets = standardized_offsets(grouped, points[centers]).reshape(-1, 3)
    normals = curv = None
    if surface:
        normals, curv, _ = describe_batch(grouped)
    return StagePlan(centers, nbr, points[centers], offsets, normals, curv)


def plan_encoder(points: np.ndarray, cfg: EncoderConfig) -> list:
    surface = cfg.use_normal or cfg.use_curvature
    plans = []
    cur = np.asarray(points, dtype=np.float64)
    for m, k in cfg.stages:
        plan = plan_stage(cur, m, k, surface)
        plans.append(plan)
        cur = plan.centers
    return plans


@dataclass
class StageParams:
    pose_s: PosEncoder
    pose_n: Optional[PosEncoder] = None
    pose_c: Optional[PosEncoder] = None
    maa: Optional[MAAParams] = None
    proj: Optional[Linear] = None


@dataclass
class StageOutput:
    centers: np.ndarray
    features: Tensor


def create_stage_params(params: ModelParams, prefix: str, in_dim: int, cfg: EncoderConfig) -> StageParams:
    width = 2 * in_dim
    sp = StageParams(PosEncoder.create(params, prefix + ".pose_s", 3, width))
    if cfg.use_normal:
        sp.pose_n = PosEncoder.create(params, prefix + ".pose_n", 3, width)
    if cfg.use_curvature:
        sp.pose_c = PosEncoder.create(params, prefix + ".pose_c", 3, width)
    branches = cfg.branches()
    if cfg.aggregation == "maa":
        sp.maa = MAAParams.create(params, prefix + ".maa", width, branches)
    else:
        sp.proj = Linear.create(params, prefix + ".proj", width * len(branches), width)
    return sp


def spatial_encode(plan: StagePlan, features: Tensor, enc: PosEncoder) -> Tensor:
    """Batched spatial branch over all neighborhoods of a plan: (M, 2D)."""
    m, k = plan.neighbor_idx.shape
    center_rows = ad.gather_rows(features, np.repeat(plan.center_idx, k))
    nbr_rows = ad.gather_rows(features, plan.neighbor_idx.ravel())
    pe = pos_encode(enc, plan.offsets)
    cat = ad.concat_cols(center_rows, nbr_rows)
    if cat.shape[1] != pe.shape[1]:
        raise ShapeMismatch(f"PosE width {pe.shape[1]} must equal concatenated feature width {cat.shape[1]}")
    return ad.max_reduce_rows(ad.hadamard(ad.add(cat, pe), pe), k)


def spatial_branch(center_feat, neighbor_feats, neighbor_points, center_point, enc: PosEncoder) -> Tensor:
    """Spatial feature (1 x 2D) of a single neighborhood.

    ``neighbor_feats`` (k x D) and ``neighbor_points`` (k x 3) are aligned
    row by row; ``center_feat`` is 1 x D.
    """
    neighbor_feats = ad.const(neighbor_feats)
    k = neighbor_feats.shape[0]
    pts = np.asarray(neighbor_points, dtype=np.float64).reshape(1, k, 3)
    center = np.asarray(center_point, dtype=np.float64).reshape(1, 3)
    offsets = standardized_offsets(pts, center).reshape(k, 3)
    center_rows = ad.gather_rows(ad.const(center_feat), np.zeros(k, dtype=np.int64))
    pe = pos_encode(enc, offsets)
    e = ad.hadamard(ad.add(ad.concat_cols(center_rows, neighbor_feats), pe), pe)
    return ad.max_reduce_rows(e)


def stage_forward(plan: StagePlan, features: Tensor, sp: StageParams) -> Tensor:
    f_s = spatial_encode(plan, features, sp.pose_s)
    f_n = pos_encode(sp.pose_n, plan.normals) if sp.pose_n is not None else None
    f_c = pos_encode(sp.pose_c, plan.curvatures) if sp.pose_c is not None else None
    if sp.maa is not None:
        return maa_aggregate(sp.maa, f_s, f_n, f_c)
    return concat_aggregate(sp.proj, f_s, f_n, f_c)


def mge_stage(points, features: Tensor, stage_cfg, sp: StageParams, plan: Optional[StagePlan] = None) -> StageOutput:
    """One encoder stage. ``stage_cfg`` is a ``(sample_count, k)`` pair."""
    features = ad.const(features)
    points = np.asarray(points, dtype=np.float64)
    if features.shape[0] != points.shape[0]:
        raise ShapeMismatch(f"{features.shape[0]} feature rows for {points.shape[0]} points")
    if plan is None:
        m, k = stage_cfg
        plan = plan_stage(points, m, k, surface=sp.pose_n is not None or sp.pose_c is not None)
    return StageOutput(plan.centers, stage_forward(plan, features, sp))


class Encoder:
    """Coordinate lift followed by the configured stages."""

    def __init__(self, params: ModelParams, cfg: EncoderConfig, prefix: str = "mge"):
        self.cfg = cfg
        self.lift = Linear.create(params, prefix + ".lift", 3, cfg.embed_dim)
        self.stages = []
        for s, width in enumerate(cfg.widths()[:-1]):
            self.stages.append(create_stage_params(params, f"{prefix}.stage{s}", width, cfg))

    def plan(self, points) -> list:
        return plan_encoder(points, self.cfg)

    def __call__(self, points, plans=None) -> tuple:
        """Return ``(lifted, outputs)``: the N x D0 lifted input features and
        one StageOutput per stage."""
        points = np.asarray(points, dtype=np.float64)
        if plans is None:
            plans = self.plan(points)
        feats = self.lift(ad.const(points))
        lifted = feats
        outputs = []
        for plan, sp in zip(plans, self.stages):
            feats = stage_forward(plan, feats, sp)
            outputs.append(StageOutput(plan.centers, feats))
        return lifted, outputs


def mge_encode(pc: PointCloud, cfg: EncoderConfig, encoder: Encoder, plans=None) -> list:
    cfg.validate_for(len(pc))
    return encoder(pc.points, plans)[1]
