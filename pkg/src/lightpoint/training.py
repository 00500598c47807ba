"""Deterministic training and evaluation loops."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .autodiff import Tape, backward
from .core import PointCloud
from .data import Sample
from .heads import Adam, Metrics, compute_metrics, scene_metrics
from .model import PointModel
from .rng import SplitMix64, derive_seed

log = logging.getLogger(__name__)

PRIMARY_METRIC = {"classify": "oa", "segment": "cls_miou", "scene_seg": "fg_iou"}


@dataclass
class Schedule:
    epochs: int = 100
    batch: int = 8
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    jitter: float = 0.0
    stop_at: Optional[float] = None   # stop once the primary metric reaches this


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train: dict
    test: dict = field(default_factory=dict)


@dataclass
class TrainingReport:
    records: list
    best_epoch: int
    best_metric: float
    best_state: dict

    def lines(self) -> list:
        return [format_header(self.records[0])] + [format_record(r) for r in self.records] if self.records else []


def format_header(rec: EpochRecord) -> str:
    cols = ["epoch", "loss"] + [f"train_{k}" for k in rec.train] + [f"test_{k}" for k in rec.test]
    return "\t".join(cols)


def format_record(rec: EpochRecord) -> str:
    vals = [str(rec.epoch), f"{rec.loss:.8f}"]
    vals += [f"{v:.6f}" for v in rec.train.values()]
    vals += [f"{v:.6f}" for v in rec.test.values()]
    return "\t".join(vals)


class PlanCache:
    """Per-sample geometry, computed on first use."""

    def __init__(self, model: PointModel):
        self.model = model
        self._plans: dict = {}

    def get(self, key, points):
        plan = self._plans.get(key)
        if plan is None:
            plan = self.model.plan(points)
            self._plans[key] = plan
        return plan


def score(model: PointModel, samples, preds, class_parts=None) -> Metrics:
    task = model.spec.task
    if task == "classify":
        return compute_metrics(np.concatenate(preds), [s.label for s in samples])
    if task == "segment":
        return compute_metrics(preds, [s.cloud.labels for s in samples], "segment",
                               [s.label for s in samples], class_parts)
    return scene_metrics(preds, [s.cloud.labels for s in samples], [s.cloud.points for s in samples])


def evaluate(model: PointModel, samples, class_parts=None, cache: Optional[PlanCache] = None) -> Metrics:
    if not samples:
        raise ValueError("no samples to evaluate")
    preds = []
    for i, s in enumerate(samples):
        plan = cache.get(i, s.cloud.points) if cache is not None else None
        out = model.forward(s.cloud.points, plan)
        preds.append(model.predict_from(out, s, class_parts))
    return score(model, samples, preds, class_parts)


def _jittered(sample: Sample, sigma: float, seed: int) -> Sample:
    noise = SplitMix64(seed).normal(sample.cloud.points.size, sigma).reshape(-1, 3)
    c = sample.cloud
    return Sample(PointCloud(c.points + noise, c.labels, c.fg_mask), sample.label)


def train(model: PointModel, dataset, schedule: Schedule, seed: int = 0, test_set=None,
          class_parts=None, emit: Optional[Callable[[str], None]] = None) -> TrainingReport:
    """Mini-batch training with gradient accumulation over independent tapes.

    The epoch order is a seeded permutation, so a run is a pure function of
    (model init, data, schedule, seed). ``emit`` receives the header and one
    tab-separated line per epoch. The best state is chosen on the primary
    test metric, or the training metric without a test set; the same metric
    drives the optional ``stop_at`` early stop.
    """
    if not dataset:
        raise ValueError("empty training set")
    opt = Adam(schedule.lr, schedule.beta1, schedule.beta2, schedule.eps)
    params = model.params
    train_cache = PlanCache(model)
    test_cache = PlanCache(model)
    key = PRIMARY_METRIC[model.spec.task]
    records = []
    best = (-np.inf, 0, params.state())
    for epoch in range(1, schedule.epochs + 1):
        order = SplitMix64(derive_seed(seed, epoch)).permutation(len(dataset))
        total = 0.0
        preds = [None] * len(dataset)
        for start in range(0, len(order), schedule.batch):
            params.zero_grad()
            for idx in order[start:start + schedule.batch]:
                sample = dataset[idx]
                if schedule.jitter > 0:
                    sample = _jittered(sample, schedule.jitter, derive_seed(seed, epoch, int(idx)))
                    plan = model.plan(sample.cloud.points)
                else:
                    plan = train_cache.get(int(idx), sample.cloud.points)
                with Tape() as tape:
                    loss, out = model.loss(sample, plan)
                backward(tape, loss)
                total += loss.item()
                preds[idx] = model.predict_from(out, sample, class_parts)
            opt.step(params, params.grads())
        params.zero_grad()
        train_metrics = score(model, dataset, preds, class_parts).as_dict()
        test_metrics = evaluate(model, test_set, class_parts, test_cache).as_dict() if test_set else {}
        rec = EpochRecord(epoch, total / len(dataset), train_metrics, test_metrics)
        records.append(rec)
        if emit is not None:
            if epoch == 1:
                emit(format_header(rec))
            emit(format_record(rec))
        current = (test_metrics or train_metrics)[key]
        if current > best[0]:
            best = (current, epoch, params.state())
        log.debug("epoch %d loss %.6f %s %.4f", epoch, rec.loss, key, current)
        if schedule.stop_at is not None and current >= schedule.stop_at:
            break
    return TrainingReport(records, best[1], float(best[0]), best[2])
