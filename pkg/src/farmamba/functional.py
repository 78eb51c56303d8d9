"""Layer-level differentiable ops built on the tape in :mod:`farmamba.tensor`."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, _norm_axes, _sigmoid, make_op, mean, max_, reshape, transpose
from .tensor import exp, relu, sigmoid, silu, softplus, tanh  # noqa: F401  (re-exported activations)


def add_bias(x: Tensor, b: Tensor, axis: int = -1) -> Tensor:
    """Add a 1-D bias along ``axis`` (the one sanctioned broadcast)."""
    ax = _norm_axes(axis, x.ndim)[0]
    if b.ndim != 1 or b.shape[0] != x.shape[ax]:
        raise ShapeError(f"add_bias: bias {b.shape} vs extent {x.shape[ax]} on axis {ax}")
    view = [1] * x.ndim
    view[ax] = -1
    reduce_axes = tuple(i for i in range(x.ndim) if i != ax)
    return make_op(x.data + b.data.reshape(view), (x, b), lambda g: (g, g.sum(axis=reduce_axes)))


def linear(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map over the last axis: ``x @ w + bias`` with ``w`` shaped [D, E]."""
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input last extent {x.shape[-1]} vs weight {w.shape}")
    xd, wd = x.data, w.data
    lead = x.shape[:-1]
    x2 = xd.reshape(-1, wd.shape[0])
    out = (x2 @ wd).reshape(lead + (wd.shape[1],))
    if bias is not None:
        if bias.shape != (wd.shape[1],):
            raise ShapeError(f"linear: bias {bias.shape} vs output extent {wd.shape[1]}")
        out = out + bias.data

    def backward(g):
        g2 = g.reshape(-1, wd.shape[1])
        gx = (g2 @ wd.T).reshape(xd.shape) if x.requires_grad else None
        gw = x2.T @ g2 if w.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, w) if bias is None else (x, w, bias)
    return make_op(out, parents, backward)


def conv2d(
    x: Tensor,
    w: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
) -> Tensor:
    """Cross-correlation of ``x`` [B,C,H,W] with ``w`` [O, C/groups, k, k]."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: expected rank-4 input and weight, got {x.shape} and {w.shape}")
    B, C, H, W = x.shape
    O, Cg, k, k2 = w.shape
    if k != k2 or k % 2 == 0:
        raise ShapeError(f"conv2d: kernel must be square and odd, got {k}x{k2}")
    if C % groups or O % groups or Cg != C // groups:
        raise ShapeError(f"conv2d: channels {C} / groups {groups} do not match weight {w.shape}")
    Hp, Wp = H + 2 * padding, W + 2 * padding
    if Hp < k or Wp < k:
        raise ShapeError(f"conv2d: padded input {Hp}x{Wp} smaller than kernel {k}")
    Ho, Wo = (Hp - k) // stride + 1, (Wp - k) // stride + 1
    if groups == C and O == C and stride == 1:
        return _depthwise(x, w, bias, padding, Ho, Wo)
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]  # B,C,Ho,Wo,k,k
    wd = w.data
    G, Og = groups, O // groups
    if G == 1:
        out = np.tensordot(cols, wd, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    else:
        cg = cols.reshape(B, G, Cg, Ho, Wo, k, k)
        out = np.einsum("bgchwij,gocij->bgohw", cg, wd.reshape(G, Og, Cg, k, k), optimize=True)
        out = out.reshape(B, O, Ho, Wo)
    if bias is not None:
        out = out + bias.data.reshape(1, O, 1, 1)
    out = np.ascontiguousarray(out)

    def backward(g):
        gx = gw = None
        if G == 1:
            if w.requires_grad:
                gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
            if x.requires_grad:
                gcols = np.tensordot(g, wd, axes=([1], [0]))  # B,Ho,Wo,C,k,k
                gcols = gcols.transpose(0, 3, 1, 2, 4, 5)
        else:
            gg = g.reshape(B, G, Og, Ho, Wo)
            wg = wd.reshape(G, Og, Cg, k, k)
            if w.requires_grad:
                gw = np.einsum("bgohw,bgchwij->gocij", gg, cols.reshape(B, G, Cg, Ho, Wo, k, k), optimize=True)
                gw = gw.reshape(O, Cg, k, k)
            if x.requires_grad:
                gcols = np.einsum("bgohw,gocij->bgchwij", gg, wg, optimize=True).reshape(B, C, Ho, Wo, k, k)
        if x.requires_grad:
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i : i + stride * (Ho - 1) + 1 : stride, j : j + stride * (Wo - 1) + 1 : stride] += gcols[..., i, j]
            gx = gxp[:, :, padding : padding + H, padding : padding + W] if padding else gxp
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    parents = (x, w) if bias is None else (x, w, bias)
    return make_op(out, parents, backward)


def _depthwise(x: Tensor, w: Tensor, bias: Tensor | None, padding: int, Ho: int, Wo: int) -> Tensor:
    # one filter per channel: k*k shifted multiply-adds beat a grouped einsum
    B, C, H, W = x.shape
    k = w.shape[-1]
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    wd = w.data[:, 0]
    out = np.zeros((B, C, Ho, Wo), dtype=np.result_type(xp, wd))
    for i in range(k):
        for j in range(k):
            out += xp[:, :, i : i + Ho, j : j + Wo] * wd[:, i, j][:, None, None]
    if bias is not None:
        out += bias.data.reshape(1, C, 1, 1)

    def backward(g):
        gxp = np.zeros(xp.shape, dtype=g.dtype) if x.requires_grad else None
        gw = np.zeros_like(wd)
        for i in range(k):
            for j in range(k):
                win = xp[:, :, i : i + Ho, j : j + Wo]
                gw[:, i, j] = np.einsum("bchw,bchw->c", g, win, optimize=True)
                if gxp is not None:
                    gxp[:, :, i : i + Ho, j : j + Wo] += g * wd[:, i, j][:, None, None]
        gx = None
        if gxp is not None:
            gx = gxp[:, :, padding : padding + H, padding : padding + W] if padding else gxp
        grads = (gx, gw[:, None])
        return grads if bias is None else grads + (g.sum(axis=(0, 2, 3)),)

    parents = (x, w) if bias is None else (x, w, bias)
    return make_op(out, parents, backward)


def layer_norm(x: Tensor, gamma: Tensor | None = None, beta: Tensor | None = None, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis, then apply the learned scale and shift."""
    xd = x.data
    D = xd.shape[-1]
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gamma.data if gamma is not None else None
    out = xhat * gd if gd is not None else xhat
    if beta is not None:
        out = out + beta.data
    lead = tuple(range(xd.ndim - 1))

    def backward(g):
        gh = g * gd if gd is not None else g
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        grads = [gx]
        if gamma is not None:
            grads.append((g * xhat).sum(axis=lead))
        if beta is not None:
            grads.append(g.sum(axis=lead))
        return tuple(grads)

    parents = [x] + [t for t in (gamma, beta) if t is not None]
    if D < 1:
        raise ShapeError("layer_norm: empty last axis")
    return make_op(out, parents, backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    ax = _norm_axes(axis, x.ndim)[0]
    z = x.data - x.data.max(axis=ax, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=ax, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=ax, keepdims=True)),)

    return make_op(out, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    ax = _norm_axes(axis, x.ndim)[0]
    z = x.data - x.data.max(axis=ax, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=ax, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=ax, keepdims=True),)

    return make_op(out, (x,), backward)


def avg_pool2d(x: Tensor, k: int) -> Tensor:
    B, C, H, W = x.shape
    if H % k or W % k:
        raise ShapeError(f"avg_pool2d: {H}x{W} not divisible by {k}")
    return mean(reshape(x, (B, C, H // k, k, W // k, k)), axis=(3, 5))


def max_pool2d(x: Tensor, k: int) -> Tensor:
    B, C, H, W = x.shape
    if H % k or W % k:
        raise ShapeError(f"max_pool2d: {H}x{W} not divisible by {k}")
    return max_(reshape(x, (B, C, H // k, k, W // k, k)), axis=(3, 5))


def upsample_nearest(x: Tensor, scale: int) -> Tensor:
    """Repeat every pixel of a [B,C,H,W] map into a ``scale`` x ``scale`` block."""
    B, C, H, W = x.shape
    out = np.repeat(np.repeat(x.data, scale, axis=2), scale, axis=3)

    def backward(g):
        return (g.reshape(B, C, H, scale, W, scale).sum(axis=(3, 5)),)

    return make_op(out, (x,), backward)


def space_to_depth(x: Tensor, p: int) -> Tensor:
    """[B,C,H,W] -> [B,H/p,W/p,p*p*C] channels-last patches (row, col, channel order)."""
    B, C, H, W = x.shape
    if H % p or W % p:
        raise ShapeError(f"space_to_depth: {H}x{W} not divisible by patch {p}")
    t = reshape(x, (B, C, H // p, p, W // p, p))
    t = transpose(t, (0, 2, 4, 3, 5, 1))
    return reshape(t, (B, H // p, W // p, p * p * C))


def to_channels_last(x: Tensor) -> Tensor:
    return transpose(x, (0, 2, 3, 1))


def to_channels_first(x: Tensor) -> Tensor:
    return transpose(x, (0, 3, 1, 2))


def sigmoid_np(x: np.ndarray) -> np.ndarray:
    return _sigmoid(x)
