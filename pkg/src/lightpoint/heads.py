"""Task heads, losses, metrics and the adaptive-moment optimizer."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import BadLabel, LengthMismatch, ShapeMismatch
from .params import Linear, ModelParams, mlp

INTERP_NEIGHBORS = 3
INTERP_EPS = 1e-8


class ClassifierHead:
    """C -> C/2 -> num_classes with relu between."""

    def __init__(self, layers):
        self.layers = list(layers)

    @classmethod
    def create(cls, params: ModelParams, width: int, num_classes: int, prefix: str = "head"):
        hidden = max(width // 2, 1)
        return cls([Linear.create(params, prefix + ".l0", width, hidden),
                    Linear.create(params, prefix + ".l1", hidden, num_classes)])

    @property
    def in_dim(self):
        return self.layers[0].w.shape[0]

    @property
    def num_classes(self):
        return self.layers[-1].w.shape[1]

    def __call__(self, x) -> Tensor:
        return mlp(self.layers, x)


def classify(final_stage, head: ClassifierHead) -> Tensor:
    """Global max pooling over centers followed by the head MLP (1 x K)."""
    feats = ad.const(final_stage.features)
    if feats.shape[1] != head.in_dim:
        raise ShapeMismatch(f"head expects width {head.in_dim}, got {feats.shape[1]}")
    return head(ad.max_reduce_rows(feats))


def interpolation_matrix(coarse_points, fine_points, k: int = INTERP_NEIGHBORS) -> np.ndarray:
    """Dense (M_fine x M_coarse) inverse-distance weights over the ``k``
    nearest coarse points; a fine point that coincides with a coarse point
    copies it exactly."""
    coarse = np.asarray(coarse_points, dtype=np.float64)
    fine = np.asarray(fine_points, dtype=np.float64)
    k = min(k, coarse.shape[0])
    diff = fine[:, None, :] - coarse[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    order = np.argsort(dist, axis=1, kind="stable")[:, :k]
    near = np.take_along_axis(dist, order, axis=1)
    w = 1.0 / (near + INTERP_EPS)
    w /= w.sum(axis=1, keepdims=True)
    exact = near[:, 0] == 0.0
    w[exact] = 0.0
    w[exact, 0] = 1.0
    mat = np.zeros((fine.shape[0], coarse.shape[0]))
    np.put_along_axis(mat, order, w, axis=1)
    return mat


def feature_propagate(coarse, fine_points, fine_features=None, weights: Optional[np.ndarray] = None) -> Tensor:
    """Interpolate ``coarse.features`` onto ``fine_points`` and append the
    skip features when given."""
    if len(coarse.centers) == 0:
        raise ShapeMismatch("coarse stage is empty")
    if weights is None:
        weights = interpolation_matrix(coarse.centers, fine_points)
    out = ad.matmul(ad.const(weights), ad.const(coarse.features))
    if fine_features is not None:
        out = ad.concat_cols(out, ad.const(fine_features))
    return out


def cross_entropy(logits, labels) -> Tensor:
    """Mean over rows of ``-log softmax(logits)[label]`` (log clamped)."""
    logits = ad.const(logits)
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    rows, k = logits.shape
    if labels.shape[0] != rows:
        raise LengthMismatch(f"{labels.shape[0]} labels for {rows} logit rows")
    if (labels < 0).any() or (labels >= k).any():
        raise BadLabel(f"labels must lie in [0, {k})")
    onehot = np.zeros((rows, k))
    onehot[np.arange(rows), labels] = 1.0
    picked = ad.matmul(ad.hadamard(ad.softmax_rows(logits), ad.const(onehot)), ad.const(np.ones((k, 1))))
    return ad.scalar_mul(ad.mean_reduce(ad.log(picked)), -1.0)


@dataclass
class Metrics:
    overall_accuracy: float
    mean_class_accuracy: Optional[float] = None
    cls_miou: Optional[float] = None
    inst_miou: Optional[float] = None
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        out = {"oa": self.overall_accuracy}
        if self.mean_class_accuracy is not None:
            out["macc"] = self.mean_class_accuracy
        if self.cls_miou is not None:
            out["cls_miou"] = self.cls_miou
        if self.inst_miou is not None:
            out["inst_miou"] = self.inst_miou
        out.update(self.extra)
        return out


def _accuracies(pred: np.ndarray, gt: np.ndarray) -> tuple:
    if pred.shape != gt.shape:
        raise LengthMismatch(f"{pred.size} predictions for {gt.size} labels")
    if gt.size == 0:
        raise LengthMismatch("no labels to score")
    oa = float((pred == gt).mean())
    per_class = [float((pred[gt == c] == c).mean()) for c in np.unique(gt)]
    return oa, float(np.mean(per_class))


def shape_iou(pred: np.ndarray, gt: np.ndarray, parts) -> float:
    """Mean part IoU of one shape; a part absent from both counts as 1."""
    ious = []
    for p in parts:
        union = np.count_nonzero((pred == p) | (gt == p))
        inter = np.count_nonzero((pred == p) & (gt == p))
        ious.append(1.0 if union == 0 else inter / union)
    return float(np.mean(ious))


def compute_metrics(predictions, labels, task: str = "classify", shape_classes=None, class_parts=None) -> Metrics:
    """OA / mAcc for ``classify``; additionally class- and instance-averaged
    part mIoU for ``segment``, where ``predictions`` and ``labels`` are
    per-shape arrays, ``shape_classes`` the class of each shape and
    ``class_parts`` maps a class to its part ids."""
    if task == "classify":
        oa, macc = _accuracies(np.asarray(predictions).ravel(), np.asarray(labels).ravel())
        return Metrics(oa, macc)
    if task != "segment":
        raise ValueError(f"unknown task {task!r}")
    if len(predictions) != len(labels) or len(labels) != len(shape_classes):
        raise LengthMismatch("predictions, labels and shape classes differ in length")
    flat_p = np.concatenate([np.asarray(p).ravel() for p in predictions])
    flat_g = np.concatenate([np.asarray(g).ravel() for g in labels])
    oa, macc = _accuracies(flat_p, flat_g)
    per_class: dict = {}
    shape_ious = []
    for p, g, c in zip(predictions, labels, shape_classes):
        iou = shape_iou(np.asarray(p), np.asarray(g), class_parts[int(c)])
        shape_ious.append(iou)
        per_class.setdefault(int(c), []).append(iou)
    cls_miou = float(np.mean([np.mean(v) for _, v in sorted(per_class.items())]))
    return Metrics(oa, macc, cls_miou, float(np.mean(shape_ious)))


def scene_metrics(predictions, fg_labels, points) -> Metrics:
    """Point accuracy plus foreground IoU, recall and far-tercile recall.

    Inputs are per-scene sequences; the far tercile is the third of
    foreground points with the largest horizontal range ``hypot(x, y)``.
    """
    pred = np.concatenate([np.asarray(p, dtype=bool).ravel() for p in predictions])
    gt = np.concatenate([np.asarray(g, dtype=bool).ravel() for g in fg_labels])
    rng = np.concatenate([np.hypot(np.asarray(p)[:, 0], np.asarray(p)[:, 1]) for p in points])
    if pred.shape != gt.shape or rng.shape != gt.shape:
        raise LengthMismatch("predictions, labels and points differ in length")
    oa, macc = _accuracies(pred.astype(int), gt.astype(int))
    union = np.count_nonzero(pred | gt)
    fg_iou = 1.0 if union == 0 else np.count_nonzero(pred & gt) / union
    n_fg = np.count_nonzero(gt)
    recall = 1.0 if n_fg == 0 else np.count_nonzero(pred & gt) / n_fg
    far_recall = 1.0
    if n_fg:
        fg_rng = rng[gt]
        far = fg_rng >= np.quantile(fg_rng, 2.0 / 3.0)
        far_recall = float(pred[gt][far].mean())
    return Metrics(oa, macc, extra={"fg_iou": float(fg_iou), "fg_recall": float(recall),
                                    "far_recall": far_recall})


class Adam:
    """Bias-corrected adaptive-moment optimizer over named arrays."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict = {}
        self.v: dict = {}
        self.t = 0

    def step(self, params, grads: dict) -> None:
        """Update ``params`` (name -> Tensor mapping or ModelParams) in place."""
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, tensor in params.items():
            g = grads[name]
            if g.shape != tensor.value.shape:
                raise ShapeMismatch(f"gradient for {name!r} has shape {g.shape}, parameter {tensor.value.shape}")
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            tensor.value -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def optimizer_step(state: Adam, params, grads) -> None:
    state.step(params, grads)
