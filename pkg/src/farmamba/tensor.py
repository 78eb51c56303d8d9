"""Dense tensors with a dynamic reverse-mode tape.

Every op records its parents and a closure mapping the output gradient to
parent gradients. ``Tensor.backward`` walks the graph in reverse topological
order. Binary ops never broadcast: operands must share a shape, or one side
is a Python scalar. Use :func:`broadcast_to` when expansion is intended.
"""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

_state = threading.local()
_DEFAULT_DTYPE = np.float64


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording for the current thread."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class ShapeError(ValueError):
    """Raised when operand extents do not line up."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(_DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- autodiff ---------------------------------------------------------
    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every trainable leaf."""
        if self.data.ndim != 0:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise RuntimeError("loss is detached from the tape; nothing to differentiate")
        order = _topological(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operators --------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return mul(reciprocal(self), other)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return max_(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def exp(self):
        return exp(self)


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def tensor(data, dtype=None, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def make_op(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    """Wrap ``data`` as the output of an op; record it on the tape if needed."""
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ (no implicit broadcasting)")


def _is_scalar(x) -> bool:
    return isinstance(x, (int, float, np.integer, np.floating))


# -- elementwise arithmetic ---------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    if _is_scalar(b):
        return make_op(a.data + float(b), (a,), lambda g: (g,))
    _check_same(a, b, "add")
    return make_op(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b) -> Tensor:
    if _is_scalar(b):
        return make_op(a.data - float(b), (a,), lambda g: (g,))
    _check_same(a, b, "sub")
    return make_op(a.data - b.data, (a, b), lambda g: (g, -g))


def neg(a: Tensor) -> Tensor:
    return make_op(-a.data, (a,), lambda g: (-g,))


def mul(a: Tensor, b) -> Tensor:
    if _is_scalar(b):
        s = float(b)
        return make_op(a.data * s, (a,), lambda g: (g * s,))
    _check_same(a, b, "mul")
    ad, bd = a.data, b.data
    return make_op(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def div(a: Tensor, b) -> Tensor:
    if _is_scalar(b):
        s = float(b)
        return make_op(a.data / s, (a,), lambda g: (g / s,))
    _check_same(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd
    return make_op(out, (a, b), lambda g: (g / bd, -g * out / bd))


def reciprocal(a: Tensor) -> Tensor:
    out = 1.0 / a.data
    return make_op(out, (a,), lambda g: (-g * out * out,))


def power(a: Tensor, p: float) -> Tensor:
    p = float(p)
    ad = a.data
    return make_op(ad**p, (a,), lambda g: (g * p * ad ** (p - 1),))


def mul_const(a: Tensor, c: np.ndarray) -> Tensor:
    """Multiply by a constant array (broadcast allowed; the constant is off-tape)."""
    c = np.asarray(c, dtype=a.dtype)
    out = a.data * c
    if out.shape != a.shape:
        raise ShapeError(f"mul_const: constant {c.shape} would change shape {a.shape}")
    return make_op(out, (a,), lambda g: (g * c,))


def add_const(a: Tensor, c: np.ndarray) -> Tensor:
    c = np.asarray(c, dtype=a.dtype)
    out = a.data + c
    if out.shape != a.shape:
        raise ShapeError(f"add_const: constant {c.shape} would change shape {a.shape}")
    return make_op(out, (a,), lambda g: (g,))


# -- unary functions ------------------------------------------------------------

def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return make_op(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return make_op(np.log(ad), (a,), lambda g: (g / ad,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return make_op(out, (a,), lambda g: (g * 0.5 / out,))


def abs_(a: Tensor) -> Tensor:
    ad = a.data
    return make_op(np.abs(ad), (a,), lambda g: (g * np.sign(ad),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return make_op(a.data * mask, (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return make_op(out, (a,), lambda g: (g * out * (1.0 - out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softplus(a: Tensor) -> Tensor:
    x = a.data
    out = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))
    return make_op(out, (a,), lambda g: (g * _sigmoid(x),))


def silu(a: Tensor) -> Tensor:
    x = a.data
    s = _sigmoid(x)
    return make_op(x * s, (a,), lambda g: (g * s * (1.0 + x * (1.0 - s)),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return make_op(out, (a,), lambda g: (g * (1.0 - out * out),))


# -- reductions -----------------------------------------------------------------

def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, (int, np.integer)) else tuple(axis)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for rank {ndim}")
        out.append(ax % ndim)
    return tuple(sorted(out))


def _expand_grad(g: np.ndarray, axes: tuple[int, ...], keepdims: bool, shape) -> np.ndarray:
    if not keepdims:
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    shape = a.shape
    out = a.data.sum(axis=axes, keepdims=keepdims)
    return make_op(np.asarray(out), (a,), lambda g: (_expand_grad(g, axes, keepdims, shape).copy(),))


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    n = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    shape = a.shape
    out = a.data.mean(axis=axes, keepdims=keepdims)
    return make_op(np.asarray(out), (a,), lambda g: (_expand_grad(g / n, axes, keepdims, shape).copy(),))


def max_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Max reduction; ties send the whole gradient to the first maximiser."""
    axes = _norm_axes(axis, a.ndim)
    x = a.data
    out = x.max(axis=axes, keepdims=True)
    # first-argmax mask over the reduced block
    moved = np.moveaxis(x, axes, tuple(range(x.ndim - len(axes), x.ndim)))
    flat = moved.reshape(moved.shape[: x.ndim - len(axes)] + (-1,))
    first = np.zeros_like(flat, dtype=bool)
    np.put_along_axis(first, flat.argmax(axis=-1)[..., None], True, axis=-1)
    mask = np.moveaxis(first.reshape(moved.shape), tuple(range(x.ndim - len(axes), x.ndim)), axes)
    shape = a.shape

    def backward(g):
        return (_expand_grad(g, axes, keepdims, shape) * mask,)

    res = out if keepdims else out.squeeze(axis=axes)
    return make_op(np.asarray(res), (a,), backward)


# -- shape manipulation -----------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return make_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_op(np.ascontiguousarray(a.data.transpose(axes)), (a,), lambda g: (g.transpose(inv),))


def broadcast_to(a: Tensor, shape) -> Tensor:
    """Explicit expansion of size-1 axes (rank must already match)."""
    shape = tuple(shape)
    if len(shape) != a.ndim:
        raise ShapeError(f"broadcast_to: rank {a.ndim} -> {len(shape)}; reshape first")
    axes = tuple(i for i, (s, t) in enumerate(zip(a.shape, shape)) if s != t)
    for i in axes:
        if a.shape[i] != 1:
            raise ShapeError(f"broadcast_to: cannot expand {a.shape} to {shape}")
    out = np.broadcast_to(a.data, shape).copy()
    return make_op(out, (a,), lambda g: (g.sum(axis=axes, keepdims=True),))


def getitem(a: Tensor, idx) -> Tensor:
    shape = a.shape

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, idx, g) if _fancy(idx) else full.__setitem__(idx, g)
        return (full,)

    return make_op(np.ascontiguousarray(a.data[idx]), (a,), backward)


def _fancy(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = list(tensors)
    ax = _norm_axes(axis, ts[0].ndim)[0]
    for t in ts[1:]:
        if t.ndim != ts[0].ndim or any(t.shape[i] != ts[0].shape[i] for i in range(t.ndim) if i != ax):
            raise ShapeError(f"concat: incompatible shapes {ts[0].shape} and {t.shape} on axis {ax}")
    sizes = [t.shape[ax] for t in ts]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(ts)))

    return make_op(np.concatenate([t.data for t in ts], axis=ax), ts, backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = list(tensors)
    return concat([expand_dims(t, axis) for t in ts], axis=axis)


def expand_dims(a: Tensor, axis: int) -> Tensor:
    shape = list(a.shape)
    ax = axis % (a.ndim + 1)
    shape.insert(ax, 1)
    return reshape(a, tuple(shape))


def split(a: Tensor, sizes: Sequence[int] | int, axis: int = 0) -> list[Tensor]:
    ax = _norm_axes(axis, a.ndim)[0]
    if isinstance(sizes, (int, np.integer)):
        if a.shape[ax] % sizes:
            raise ShapeError(f"split: extent {a.shape[ax]} not divisible into {sizes} parts")
        sizes = [a.shape[ax] // sizes] * int(sizes)
    if sum(sizes) != a.shape[ax]:
        raise ShapeError(f"split: sizes {list(sizes)} do not sum to {a.shape[ax]}")
    out, start = [], 0
    for s in sizes:
        sl = [slice(None)] * a.ndim
        sl[ax] = slice(start, start + s)
        out.append(getitem(a, tuple(sl)))
        start += s
    return out


def pad(a: Tensor, widths: Sequence[tuple[int, int]]) -> Tensor:
    """Zero padding; ``widths`` has one (before, after) pair per axis."""
    widths = [tuple(w) for w in widths]
    sl = tuple(slice(b, b + n) for (b, _), n in zip(widths, a.shape))
    return make_op(np.pad(a.data, widths), (a,), lambda g: (g[sl],))


def take(a: Tensor, index: np.ndarray, axis: int) -> Tensor:
    """Gather along one axis with an integer permutation or selection."""
    index = np.asarray(index)
    ax = _norm_axes(axis, a.ndim)[0]
    shape = a.shape
    is_perm = index.ndim == 1 and index.size == shape[ax] and np.array_equal(np.sort(index), np.arange(shape[ax]))
    if is_perm:
        inv = np.argsort(index)

        def backward(g):
            return (np.take(g, inv, axis=ax),)
    else:

        def backward(g):
            full = np.zeros(shape, dtype=g.dtype)
            moved = np.moveaxis(full, ax, 0)
            np.add.at(moved, index, np.moveaxis(g, ax, 0))
            return (full,)

    return make_op(np.take(a.data, index, axis=ax), (a,), backward)


def roll(a: Tensor, shifts: Sequence[int], axes: Sequence[int]) -> Tensor:
    shifts, axes = tuple(shifts), tuple(axes)
    neg_shifts = tuple(-s for s in shifts)
    return make_op(np.roll(a.data, shifts, axes), (a,), lambda g: (np.roll(g, neg_shifts, axes),))


def einsum(subscripts: str, a: Tensor, b: Tensor) -> Tensor:
    """Two-operand einsum; each operand index must survive in the other operand or the output."""
    ins, out = subscripts.replace(" ", "").split("->")
    sa, sb = ins.split(",")
    for s, other in ((sa, sb), (sb, sa)):
        for ch in s:
            if ch not in other and ch not in out:
                raise ValueError(f"einsum: index '{ch}' is reduced within a single operand")
    ad, bd = a.data, b.data
    res = np.einsum(subscripts, ad, bd, optimize=True)

    def backward(g):
        ga = np.einsum(f"{out},{sb}->{sa}", g, bd, optimize=True) if a.requires_grad else None
        gb = np.einsum(f"{out},{sa}->{sb}", g, ad, optimize=True) if b.requires_grad else None
        return ga, gb

    return make_op(res, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matmul over leading axes, both operands of equal rank."""
    if a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(ad, -1, -2) @ g if b.requires_grad else None
        return ga, gb

    return make_op(ad @ bd, (a, b), backward)


def where_const(mask: np.ndarray, a: Tensor, fill: float) -> Tensor:
    """Entries of ``a`` where ``mask`` holds, ``fill`` elsewhere; fill receives no gradient."""
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    out = np.where(mask, a.data, np.asarray(fill, dtype=a.dtype))
    return make_op(out, (a,), lambda g: (g * mask,))


def zeros(shape, dtype=_DEFAULT_DTYPE, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def ones(shape, dtype=_DEFAULT_DTYPE, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=requires_grad)


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]
