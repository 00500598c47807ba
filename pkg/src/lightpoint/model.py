"""Task models assembled from the encoder, the semantic branch and heads.

* ``classify``: encoder -> global max pooling -> classifier head.
* ``segment``: encoder -> feature propagation back to every input point
  with skip concatenation -> per-point head over all part ids.
* ``scene_seg``: as ``segment`` with two classes (background/foreground),
  optionally enhanced by the semantic branch whose focal-style loss is added
  to the cross-entropy with weight ``seg_weight``.

An encoder without stages reduces to the per-point coordinate lift.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .core import EncoderConfig
from .dse import DseOutput, DseParams, distance_focal_loss, dse_enhance, dse_forward
from .errors import ConfigError
from .heads import ClassifierHead, classify, cross_entropy, feature_propagate, interpolation_matrix
from .mge import Encoder, StageOutput
from .params import ModelParams

TASKS = ("classify", "segment", "scene_seg")


@dataclass(frozen=True)
class ModelSpec:
    task: str
    encoder: EncoderConfig
    num_classes: int
    use_distance: bool = True
    seg_weight: float = 1.0

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be at least 2")
        if self.encoder.use_dse and self.task != "scene_seg":
            raise ConfigError("the semantic branch is only available for scene_seg")
        if self.task == "classify" and not self.encoder.stages:
            raise ConfigError("classification needs at least one encoder stage")

    @property
    def point_width(self) -> int:
        """Per-point feature width entering the semantic branch / head."""
        return sum(self.encoder.widths())


@dataclass
class Plan:
    """Cached non-learnable geometry for one cloud."""

    stages: list
    interp: list      # weights, coarsest level first, ending at the input points


@dataclass
class Forward:
    logits: Tensor
    dse: Optional[DseOutput] = None


class PointModel:
    def __init__(self, spec: ModelSpec, seed: int = 0):
        self.spec = spec
        self.params = ModelParams(seed)
        self.encoder = Encoder(self.params, spec.encoder)
        self.dse = None
        if spec.task == "classify":
            self.head = ClassifierHead.create(self.params, spec.encoder.out_dim, spec.num_classes)
        else:
            width = spec.point_width
            if spec.encoder.use_dse:
                self.dse = DseParams.create(self.params, width, spec.use_distance)
                width += width // 4
            self.head = ClassifierHead.create(self.params, width, spec.num_classes)

    def plan(self, points, decode: Optional[bool] = None) -> Plan:
        """Geometry for ``points``; ``decode`` adds propagation weights
        (on by default for the per-point tasks)."""
        points = np.asarray(points, dtype=np.float64)
        self.spec.encoder.validate_for(points.shape[0])
        stages = self.encoder.plan(points)
        interp = []
        if decode is None:
            decode = self.spec.task != "classify"
        if decode and stages:
            levels = [p.centers for p in stages]
            targets = levels[:-1][::-1] + [points]
            src = levels[::-1]
            interp = [interpolation_matrix(c, f) for c, f in zip(src, targets)]
        return Plan(stages, interp)

    def point_features(self, lifted: Tensor, outputs: list, plan: Plan) -> Tensor:
        """Propagate stage features back to the input points."""
        if not outputs:
            return lifted
        skips = [o.features for o in outputs[:-1]][::-1] + [lifted]
        centers = [o.centers for o in outputs][::-1]
        feats = outputs[-1].features
        for w, skip, c in zip(plan.interp, skips, centers):
            feats = feature_propagate(StageOutput(c, feats), None, skip, weights=w)
        return feats

    def encode(self, points, plan: Optional[Plan] = None) -> np.ndarray:
        """Per-point features (semantic-enhanced when the branch is on)."""
        points = np.asarray(points, dtype=np.float64)
        if plan is None or (plan.stages and not plan.interp):
            plan = self.plan(points, decode=True)
        lifted, outputs = self.encoder(points, plan.stages)
        feats = self.point_features(lifted, outputs, plan)
        if self.dse is not None:
            feats = dse_enhance(feats, points, self.dse)
        return feats.value.copy()

    def forward(self, points, plan: Optional[Plan] = None) -> Forward:
        points = np.asarray(points, dtype=np.float64)
        if plan is None:
            plan = self.plan(points)
        lifted, outputs = self.encoder(points, plan.stages)
        if self.spec.task == "classify":
            return Forward(classify(outputs[-1], self.head))
        feats = self.point_features(lifted, outputs, plan)
        dse_out = None
        if self.dse is not None:
            dse_out = dse_forward(self.dse, feats, points)
            feats = dse_enhance(feats, points, self.dse, dse_out)
        return Forward(self.head(feats), dse_out)

    def loss(self, sample, plan: Optional[Plan] = None) -> tuple:
        """``(loss, forward)`` for one training sample."""
        out = self.forward(sample.cloud.points, plan)
        if self.spec.task == "classify":
            return cross_entropy(out.logits, [sample.label]), out
        targets = sample.cloud.labels
        loss = cross_entropy(out.logits, targets)
        if out.dse is not None:
            seg = distance_focal_loss(out.dse.fg_prob, targets, out.dse.d)
            loss = ad.add(loss, ad.scalar_mul(seg, self.spec.seg_weight))
        return loss, out

    def predict_from(self, out: Forward, sample=None, class_parts=None) -> np.ndarray:
        logits = out.logits.value
        if self.spec.task == "classify":
            return np.array([int(np.argmax(logits[0]))])
        if self.spec.task == "segment" and class_parts is not None and sample is not None:
            parts = np.asarray(class_parts[sample.label])
            return parts[np.argmax(logits[:, parts], axis=1)]
        return np.argmax(logits, axis=1)

    def expected_shapes(self) -> dict:
        return {n: t.shape for n, t in self.params.items()}
