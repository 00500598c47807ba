"""Minimal reverse-mode differentiation over dense 2-D float64 matrices.

Operations run eagerly. While a :class:`Tape` is active (``with Tape() as
tape:``), every operation with a gradient-requiring input is appended to it
in execution order, so the recorded list is already topologically sorted.
:func:`backward` walks it in reverse and accumulates into the ``grad`` of
leaf tensors. The active tape is held in a context variable, which keeps
tapes on different threads independent.

There is no implicit broadcasting: use :func:`broadcast_row` explicitly.
"""

from __future__ import annotations

import contextvars
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DomainError, NotScalarLoss, ShapeMismatch

POW_EPS = 1e-7
LOG_EPS = 1e-7

_active_tape: contextvars.ContextVar = contextvars.ContextVar("lightpoint_tape", default=None)


class Tensor:
    __slots__ = ("value", "requires_grad", "grad", "name", "_parents", "_backward", "_op")

    def __init__(self, value, requires_grad: bool = False, name: Optional[str] = None):
        v = np.array(value, dtype=np.float64)
        if v.ndim == 0:
            v = v.reshape(1, 1)
        elif v.ndim == 1:
            v = v.reshape(1, -1)
        elif v.ndim != 2:
            raise ShapeMismatch(f"tensors are 2-D, got {v.ndim}-D value")
        self.value = v
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name
        self._parents = ()
        self._backward = None
        self._op = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def is_leaf(self):
        return self._op is None

    def zero_grad(self):
        self.grad = None

    def item(self) -> float:
        if self.value.shape != (1, 1):
            raise NotScalarLoss(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.value[0, 0])

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scalar_mul(self, other)
        return hadamard(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def const(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class Tape:
    """Ordered record of primitive applications."""

    def __init__(self):
        self.nodes: list = []
        self.leaves: dict = {}
        self._token = None

    def __enter__(self):
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc):
        _active_tape.reset(self._token)
        self._token = None
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, out: Tensor, parents: Sequence[Tensor]) -> None:
        for p in parents:
            if p.is_leaf and p.requires_grad:
                self.leaves[id(p)] = p
        self.nodes.append(out)


def _make(value: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.value = value
    out.grad = None
    out.name = None
    out.requires_grad = any(p.requires_grad for p in parents)
    out._op = op
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
        tape = _active_tape.get()
        if tape is not None:
            tape.record(out, parents)
    else:
        out._parents = ()
        out._backward = None
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every gradient-requiring leaf seen by
    ``tape``. Leaves the loss does not depend on get an all-zero grad."""
    if loss.shape != (1, 1):
        raise NotScalarLoss(f"loss must be 1x1, got {loss.shape}")
    for leaf in tape.leaves.values():
        if leaf.grad is None:
            leaf.grad = np.zeros_like(leaf.value)
    if loss.is_leaf:
        if loss.requires_grad:
            loss.grad = (0.0 if loss.grad is None else loss.grad) + np.ones((1, 1))
        return
    pending = {id(loss): np.ones((1, 1))}
    for node in reversed(tape.nodes):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent.is_leaf:
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.value)
                parent.grad += pg
            else:
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg


# ---------------------------------------------------------------- primitives


def _same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = const(a), const(b)
    _same_shape(a, b, "add")
    return _make(a.value + b.value, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = const(a), const(b)
    _same_shape(a, b, "sub")
    return _make(a.value - b.value, (a, b), lambda g: (g, -g), "sub")


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    a, b = const(a), const(b)
    _same_shape(a, b, "hadamard")
    av, bv = a.value, b.value
    return _make(av * bv, (a, b), lambda g: (g * bv, g * av), "hadamard")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = const(a), const(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    av, bv = a.value, b.value

    def bw(g):
        ga = g @ bv.T if a.requires_grad else None
        gb = av.T @ g if b.requires_grad else None
        return ga, gb

    return _make(av @ bv, (a, b), bw, "matmul")


def concat_cols(*tensors: Tensor) -> Tensor:
    tensors = [const(t) for t in tensors]
    rows = {t.shape[0] for t in tensors}
    if len(rows) != 1:
        raise ShapeMismatch(f"concat_cols: row counts {sorted(rows)} differ")
    bounds = np.cumsum([0] + [t.shape[1] for t in tensors])

    def bw(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(tensors)))

    return _make(np.concatenate([t.value for t in tensors], axis=1), tensors, bw, "concat_cols")


def broadcast_row(a: Tensor, n: int) -> Tensor:
    """Repeat a 1 x C row ``n`` times."""
    a = const(a)
    if a.shape[0] != 1:
        raise ShapeMismatch(f"broadcast_row needs a single row, got {a.shape}")
    return _make(np.broadcast_to(a.value, (n, a.shape[1])), (a,), lambda g: (g.sum(axis=0, keepdims=True),),
                 "broadcast_row")


def relu(a: Tensor) -> Tensor:
    a = const(a)
    mask = a.value > 0
    return _make(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,), "relu")


def sigmoid(a: Tensor) -> Tensor:
    a = const(a)
    s = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return _make(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def softmax_rows(a: Tensor) -> Tensor:
    a = const(a)
    z = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return _make(s, (a,), bw, "softmax_rows")


def _check_domain(v: np.ndarray, op: str):
    if np.isnan(v).any():
        raise DomainError(f"{op}: NaN input")


def log(a: Tensor) -> Tensor:
    """Natural log with the argument clamped to ``[LOG_EPS, inf)``."""
    a = const(a)
    _check_domain(a.value, "log")
    live = a.value >= LOG_EPS
    x = np.where(live, a.value, LOG_EPS)
    return _make(np.log(x), (a,), lambda g: (np.where(live, g / x, 0.0),), "log")


def pow_elem(base: Tensor, exponent: Tensor) -> Tensor:
    """Elementwise ``base ** exponent``, differentiable in both arguments.

    The base is clamped to ``[POW_EPS, inf)``; clamped entries pass no
    gradient to the base.
    """
    base, exponent = const(base), const(exponent)
    _same_shape(base, exponent, "pow_elem")
    _check_domain(base.value, "pow_elem")
    _check_domain(exponent.value, "pow_elem")
    live = base.value >= POW_EPS
    b = np.where(live, base.value, POW_EPS)
    e = exponent.value
    out = np.power(b, e)
    if not np.isfinite(out).all():
        raise DomainError("pow_elem: non-finite result")

    def bw(g):
        gb = np.where(live, g * e * np.power(b, e - 1.0), 0.0) if base.requires_grad else None
        ge = g * out * np.log(b) if exponent.requires_grad else None
        return gb, ge

    return _make(out, (base, exponent), bw, "pow_elem")


def max_reduce_rows(a: Tensor, group: Optional[int] = None) -> Tensor:
    """Column-wise max over consecutive blocks of ``group`` rows (default:
    all rows). Gradient goes to the first maximal row of each block."""
    a = const(a)
    rows, cols = a.shape
    group = rows if group is None else group
    if group < 1 or rows % group:
        raise ShapeMismatch(f"max_reduce_rows: {rows} rows not divisible into groups of {group}")
    blocks = a.value.reshape(rows // group, group, cols)
    arg = blocks.argmax(axis=1)
    out = np.take_along_axis(blocks, arg[:, None, :], axis=1)[:, 0, :]

    def bw(g):
        grad = np.zeros_like(blocks)
        np.put_along_axis(grad, arg[:, None, :], g[:, None, :], axis=1)
        return (grad.reshape(rows, cols),)

    return _make(out, (a,), bw, "max_reduce_rows")


def sum_reduce(a: Tensor) -> Tensor:
    a = const(a)
    shape = a.shape
    return _make(np.array([[a.value.sum()]]), (a,), lambda g: (np.full(shape, g[0, 0]),), "sum_reduce")


def mean_reduce(a: Tensor) -> Tensor:
    a = const(a)
    shape = a.shape
    n = a.value.size
    return _make(np.array([[a.value.mean()]]), (a,), lambda g: (np.full(shape, g[0, 0] / n),), "mean_reduce")


def scalar_mul(a: Tensor, c: float) -> Tensor:
    a = const(a)
    c = float(c)
    return _make(a.value * c, (a,), lambda g: (g * c,), "scalar_mul")


def gather_rows(a: Tensor, index) -> Tensor:
    """Rows of ``a`` selected by ``index`` (repeats allowed)."""
    a = const(a)
    index = np.asarray(index, dtype=np.int64).ravel()
    rows = a.shape[0]
    if index.size and (index.min() < 0 or index.max() >= rows):
        raise ShapeMismatch(f"gather_rows: index out of range for {rows} rows")

    def bw(g):
        grad = np.zeros_like(a.value)
        if index.size == 0:
            return (grad,)
        order = np.argsort(index, kind="stable")
        sorted_idx = index[order]
        starts = np.flatnonzero(np.r_[True, sorted_idx[1:] != sorted_idx[:-1]])
        grad[sorted_idx[starts]] = np.add.reduceat(g[order], starts, axis=0)
        return (grad,)

    return _make(a.value[index], (a,), bw, "gather_rows")


def clamp(a: Tensor, low: float, high: float) -> Tensor:
    """Clip to ``[low, high]``; clipped entries pass no gradient."""
    a = const(a)
    live = (a.value >= low) & (a.value <= high)
    return _make(np.clip(a.value, low, high), (a,), lambda g: (g * live,), "clamp")


PRIMITIVES = (
    "add", "sub", "hadamard", "matmul", "concat_cols", "broadcast_row", "relu",
    "sigmoid", "softmax_rows", "log", "pow_elem", "max_reduce_rows", "mean_reduce",
    "sum_reduce", "scalar_mul", "gather_rows", "clamp",
)


# ---------------------------------------------------------------- helpers


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """``x @ w + b`` with ``b`` a 1 x C row."""
    y = matmul(x, w)
    return add(y, broadcast_row(b, y.shape[0]))


# ---------------------------------------------------------------- checking


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    per_input: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error <= self.tol)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-5) -> np.ndarray:
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def grad_check(f: Callable, inputs: Sequence[Tensor], tol: float = 1e-4, step: float = 1e-6,
               max_entries: Optional[int] = None, seed: int = 0) -> GradCheckReport:
    """Compare analytic gradients of the scalar ``f(*inputs)`` with central
    finite differences.

    ``max_entries`` caps how many coordinates per input are probed (chosen
    with a seeded permutation); None probes all of them.
    """
    for x in inputs:
        x.grad = None
    with Tape() as tape:
        loss = f(*inputs)
    backward(tape, loss)
    rng = np.random.default_rng(seed)
    worst = 0.0
    per_input = []
    for x in inputs:
        analytic = x.grad if x.grad is not None else np.zeros_like(x.value)
        flat = x.value.reshape(-1)
        probe = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            probe = np.sort(rng.permutation(flat.size)[:max_entries])
        errs = []
        for i in probe:
            orig = flat[i]
            flat[i] = orig + step
            up = f(*inputs).item()
            flat[i] = orig - step
            down = f(*inputs).item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * step)
            errs.append(relative_error(analytic.reshape(-1)[i], numeric))
        err = float(max(errs)) if errs else 0.0
        per_input.append(err)
        worst = max(worst, err)
    return GradCheckReport(worst, tol, per_input)
