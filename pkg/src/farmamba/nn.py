"""Minimal module system: parameter discovery plus a few reusable layers."""
from __future__ import annotations

import math
from collections import OrderedDict

import numpy as np

from . import functional as F
from .params import ParamTree
from .tensor import Tensor


class Module:
    """Base class; parameters are discovered from attributes in assignment order.

    Attributes whose name starts with ``_`` are never searched, which lets a
    module hold a reference to parameters owned elsewhere.
    """

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            if not name.startswith("_"):
                yield from _walk(value, f"{prefix}{name}")

    def param_tree(self) -> ParamTree:
        return ParamTree(OrderedDict(self.named_parameters()))

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _walk(value, path: str):
    if isinstance(value, Tensor):
        if value.requires_grad:
            yield path, value
    elif isinstance(value, Module):
        yield from value.named_parameters(path + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(item, f"{path}.{i}")


def param(arr: np.ndarray, dtype) -> Tensor:
    return Tensor(np.asarray(arr, dtype=dtype), requires_grad=True)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, dtype=np.float64, bias: bool = True, init_scale: float = 1.0):
        bound = init_scale / math.sqrt(d_in)
        self.weight = param(rng.uniform(-bound, bound, (d_in, d_out)), dtype)
        self.bias = param(np.zeros(d_out), dtype) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(
        self,
        c_in: int,
        c_out: int,
        k: int,
        rng: np.random.Generator,
        dtype=np.float64,
        groups: int = 1,
        bias: bool = True,
    ):
        fan_in = (c_in // groups) * k * k
        bound = math.sqrt(3.0 / fan_in)
        self.weight = param(rng.uniform(-bound, bound, (c_out, c_in // groups, k, k)), dtype)
        self.bias = param(np.zeros(c_out), dtype) if bias else None
        self.groups = groups
        self.padding = k // 2

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, padding=self.padding, groups=self.groups)

    def set_identity(self) -> None:
        """Centre-tap identity kernel (requires c_out == c_in)."""
        w = np.zeros_like(self.weight.data)
        O, Cg, k, _ = w.shape
        for o in range(O):
            w[o, o % Cg if self.groups > 1 else o, k // 2, k // 2] = 1.0
        self.weight.data[...] = w
        if self.bias is not None:
            self.bias.data[...] = 0.0


class LayerNorm(Module):
    def __init__(self, d: int, dtype=np.float64):
        self.weight = param(np.ones(d), dtype)
        self.bias = param(np.zeros(d), dtype)

    def forward(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.weight, self.bias)


class ChannelNorm(Module):
    """LayerNorm over the channel axis of a [B,C,H,W] map."""

    def __init__(self, d: int, dtype=np.float64):
        self.norm = LayerNorm(d, dtype)

    def forward(self, x: Tensor) -> Tensor:
        return F.to_channels_first(self.norm(F.to_channels_last(x)))
