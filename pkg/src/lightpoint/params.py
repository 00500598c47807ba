"""Named parameter registry and the small affine layer built on it."""

from __future__ import annotations

import math
from collections import OrderedDict

import numpy as np

from .autodiff import Tensor, affine, relu
from .rng import SplitMix64


class ModelParams:
    """Ordered, name-unique collection of trainable tensors.

    Registration order fixes both the initialization draw order and the
    checkpoint layout.
    """

    def __init__(self, seed: int = 0):
        self._tensors: "OrderedDict[str, Tensor]" = OrderedDict()
        self.rng = SplitMix64(seed)

    def add(self, name: str, value) -> Tensor:
        if name in self._tensors:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(value, requires_grad=True, name=name)
        self._tensors[name] = t
        return t

    def uniform(self, name: str, shape, fan_in: int) -> Tensor:
        bound = 1.0 / math.sqrt(fan_in)
        n = int(np.prod(shape))
        return self.add(name, self.rng.uniform(n, -bound, bound).reshape(shape))

    def __getitem__(self, name) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name):
        return name in self._tensors

    def __iter__(self):
        return iter(self._tensors)

    def __len__(self):
        return len(self._tensors)

    def items(self):
        return self._tensors.items()

    def values(self):
        return self._tensors.values()

    def count(self, prefix: str = "") -> int:
        return sum(t.value.size for n, t in self._tensors.items() if n.startswith(prefix))

    def zero_grad(self):
        for t in self._tensors.values():
            t.grad = None

    def grads(self) -> dict:
        return {n: (t.grad if t.grad is not None else np.zeros_like(t.value)) for n, t in self._tensors.items()}

    def state(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, t.value.copy()) for n, t in self._tensors.items())

    def load_state(self, state) -> None:
        for n, t in self._tensors.items():
            t.value = np.array(state[n], dtype=np.float64).reshape(t.shape)


class Linear:
    """``x @ w + b`` with w (fan_in x fan_out) and b (1 x fan_out)."""

    def __init__(self, w: Tensor, b: Tensor):
        self.w = w
        self.b = b

    @classmethod
    def create(cls, params: ModelParams, prefix: str, fan_in: int, fan_out: int) -> "Linear":
        w = params.uniform(prefix + ".w", (fan_in, fan_out), fan_in)
        b = params.uniform(prefix + ".b", (1, fan_out), fan_in)
        return cls(w, b)

    @property
    def size(self):
        return self.w.value.size + self.b.value.size

    def __call__(self, x):
        return affine(x, self.w, self.b)


def mlp(layers, x, final_activation=None):
    """Apply affine layers with relu between them."""
    for i, layer in enumerate(layers):
        x = layer(x)
        if i + 1 < len(layers):
            x = relu(x)
    return final_activation(x) if final_activation is not None else x
