"""Registered finite-difference gradient checks.

Every case builds a scalar function and its inputs from a seeded generator.
Inputs are kept away from kinks (relu at 0, clamp bounds, max ties) so the
central difference is meaningful. Primitives are looked up on the autodiff
module at call time, so patching one there is seen by the suite.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .core import EncoderConfig
from .dse import DseParams, distance_factor, distance_focal_loss, semantic_branch
from .heads import ClassifierHead, classify, cross_entropy
from .mge import StageOutput, create_stage_params, plan_stage, stage_forward
from .params import ModelParams

TOL = 1e-4
STEP = 1e-6


def _leaf(rng, shape, low=-1.0, high=1.0, away_from=None, margin=0.05) -> Tensor:
    v = rng.uniform(low, high, size=shape)
    if away_from is not None:
        close = np.abs(v - away_from) < margin
        v[close] = away_from + np.where(v[close] >= away_from, margin, -margin) * 2
    return Tensor(v, requires_grad=True)


def _distinct(rng, shape, gap=0.05) -> Tensor:
    """Entries whose pairwise gaps exceed ``gap`` (no max ties)."""
    n = int(np.prod(shape))
    v = (rng.permutation(n) * gap + rng.uniform(0, gap / 4, n)).reshape(shape)
    return Tensor(v - v.mean(), requires_grad=True)


def _weights(rng, shape):
    return ad.const(rng.uniform(-1, 1, size=shape))


def case_add(rng):
    a, b = _leaf(rng, (3, 4)), _leaf(rng, (3, 4))
    w = _weights(rng, (3, 4))
    return lambda a, b: ad.sum_reduce(ad.hadamard(ad.add(a, b), w)), [a, b]


def case_sub(rng):
    a, b = _leaf(rng, (3, 4)), _leaf(rng, (3, 4))
    w = _weights(rng, (3, 4))
    return lambda a, b: ad.sum_reduce(ad.hadamard(ad.sub(a, b), w)), [a, b]


def case_hadamard(rng):
    a, b = _leaf(rng, (3, 4)), _leaf(rng, (3, 4))
    w = _weights(rng, (3, 4))
    return lambda a, b: ad.sum_reduce(ad.hadamard(ad.hadamard(a, b), w)), [a, b]


def case_matmul(rng):
    a, b = _leaf(rng, (3, 5)), _leaf(rng, (5, 2))
    w = _weights(rng, (3, 2))
    return lambda a, b: ad.sum_reduce(ad.hadamard(ad.matmul(a, b), w)), [a, b]


def case_concat_cols(rng):
    a, b = _leaf(rng, (4, 2)), _leaf(rng, (4, 3))
    w = _weights(rng, (4, 5))
    return lambda a, b: ad.sum_reduce(ad.hadamard(ad.concat_cols(a, b), w)), [a, b]


def case_broadcast_row(rng):
    a = _leaf(rng, (1, 4))
    w = _weights(rng, (5, 4))
    return lambda a: ad.sum_reduce(ad.hadamard(ad.broadcast_row(a, 5), w)), [a]


def case_relu(rng):
    a = _leaf(rng, (4, 4), away_from=0.0)
    w = _weights(rng, (4, 4))
    return lambda a: ad.sum_reduce(ad.hadamard(ad.relu(a), w)), [a]


def case_sigmoid(rng):
    a = _leaf(rng, (4, 3), -3, 3)
    w = _weights(rng, (4, 3))
    return lambda a: ad.sum_reduce(ad.hadamard(ad.sigmoid(a), w)), [a]


def case_softmax_rows(rng):
    a = _leaf(rng, (4, 5), -2, 2)
    w = _weights(rng, (4, 5))
    return lambda a: ad.sum_reduce(ad.hadamard(ad.softmax_rows(a), w)), [a]


def case_log(rng):
    a = _leaf(rng, (3, 4), 0.2, 3.0)
    w = _weights(rng, (3, 4))
    return lambda a: ad.sum_reduce(ad.hadamard(ad.log(a), w)), [a]


def case_pow_elem(rng):
    base = _leaf(rng, (3, 3), 0.2, 2.0)
    expo = _leaf(rng, (3, 3), -2.0, 3.0)
    w = _weights(rng, (3, 3))
    return lambda b, e: ad.sum_reduce(ad.hadamard(ad.pow_elem(b, e), w)), [base, expo]


def case_max_reduce_rows(rng):
    a = _distinct(rng, (6, 3))
    w = _weights(rng, (2, 3))
    return lambda a: ad.sum_reduce(ad.hadamard(ad.max_reduce_rows(a, 3), w)), [a]


def case_sum_reduce(rng):
    a = _leaf(rng, (3, 4))
    return lambda a: ad.sum_reduce(ad.hadamard(a, a)), [a]


def case_mean_reduce(rng):
    a = _leaf(rng, (3, 4))
    return lambda a: ad.mean_reduce(ad.hadamard(a, a)), [a]


def case_scalar_mul(rng):
    a = _leaf(rng, (3, 4))
    w = _weights(rng, (3, 4))
    return lambda a: ad.sum_reduce(ad.hadamard(ad.scalar_mul(a, -2.5), w)), [a]


def case_gather_rows(rng):
    a = _leaf(rng, (4, 3))
    idx = np.array([2, 0, 2, 3, 2])
    w = _weights(rng, (5, 3))
    return lambda a: ad.sum_reduce(ad.hadamard(ad.gather_rows(a, idx), w)), [a]


def case_clamp(rng):
    a = _leaf(rng, (4, 4), -2, 2)
    v = a.value
    for bound in (-1.0, 1.0):
        close = np.abs(v - bound) < 0.05
        v[close] = bound + 0.1
    w = _weights(rng, (4, 4))
    return lambda a: ad.sum_reduce(ad.hadamard(ad.clamp(a, -1.0, 1.0), w)), [a]


def case_stage_to_cross_entropy(rng):
    """Encoding stage (spatial/normal/curvature branches, adaptive
    aggregation) -> max pooling -> classifier -> cross-entropy."""
    points = rng.normal(size=(24, 3))
    cfg = EncoderConfig(embed_dim=4, stages=((6, 4),))
    params = ModelParams(int(rng.integers(1 << 30)))
    sp = create_stage_params(params, "stage", 4, cfg)
    head = ClassifierHead.create(params, cfg.out_dim, 3)
    # move the aggregation weights off their init so every term is exercised
    for name, t in params.items():
        if ".maa." in name:
            t.value[:] = rng.uniform(-1.5, 1.5, size=t.shape)
    plan = plan_stage(points, 6, 4)
    feats = _leaf(rng, (24, 4))
    leaves = [feats] + list(params.values())

    def f(x, *_):
        out = StageOutput(plan.centers, stage_forward(plan, x, sp))
        return cross_entropy(classify(out, head), [1])

    return f, leaves


def case_distance_focal(rng):
    """Semantic branch -> foreground probability and distance branch -> d
    -> distance-modulated focal loss."""
    params = ModelParams(int(rng.integers(1 << 30)))
    dse = DseParams.create(params, 8)
    points = rng.uniform(-20, 20, size=(10, 3))
    points[:, :2] /= 20.0
    labels = rng.integers(0, 2, size=10)
    feats = _leaf(rng, (10, 8))

    def f(x, *_):
        prob, _sem = semantic_branch(dse, x)
        return distance_focal_loss(prob, labels, distance_factor(dse, points))

    return f, [feats] + list(params.values())


@dataclass
class Case:
    name: str
    build: Callable
    max_entries: Optional[int] = None


SUITE = {
    "add": Case("add", case_add),
    "sub": Case("sub", case_sub),
    "hadamard": Case("hadamard", case_hadamard),
    "matmul": Case("matmul", case_matmul),
    "concat_cols": Case("concat_cols", case_concat_cols),
    "broadcast_row": Case("broadcast_row", case_broadcast_row),
    "relu": Case("relu", case_relu),
    "sigmoid": Case("sigmoid", case_sigmoid),
    "softmax_rows": Case("softmax_rows", case_softmax_rows),
    "log": Case("log", case_log),
    "pow_elem": Case("pow_elem", case_pow_elem),
    "max_reduce_rows": Case("max_reduce_rows", case_max_reduce_rows),
    "sum_reduce": Case("sum_reduce", case_sum_reduce),
    "mean_reduce": Case("mean_reduce", case_mean_reduce),
    "scalar_mul": Case("scalar_mul", case_scalar_mul),
    "gather_rows": Case("gather_rows", case_gather_rows),
    "clamp": Case("clamp", case_clamp),
    "stage_to_cross_entropy": Case("stage_to_cross_entropy", case_stage_to_cross_entropy),
    "distance_focal_loss": Case("distance_focal_loss", case_distance_focal),
}

COMPOSITES = ("stage_to_cross_entropy", "distance_focal_loss")


@dataclass
class CaseResult:
    name: str
    max_rel_error: float
    passed: bool


def run_suite(seed: int = 0, tol: float = TOL, names=None) -> list:
    results = []
    for i, name in enumerate(names or SUITE):
        case = SUITE[name]
        rng = np.random.default_rng([seed, i])
        f, inputs = case.build(rng)
        rep = ad.grad_check(f, inputs, tol=tol, step=STEP, max_entries=case.max_entries, seed=seed)
        results.append(CaseResult(name, rep.max_rel_error, rep.passed))
    return results
