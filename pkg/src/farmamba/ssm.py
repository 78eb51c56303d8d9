"""Selective state-space scan, four-direction SS2D and the VSS block.

Recurrence per channel ``e`` and state ``n`` (zero initial state)::

    h_t = exp(delta_t * A) * h_{t-1} + delta_t * B_t * u_t
    y_t = <C_t, h_t> + D * u_t

``delta``, ``B`` and ``C`` are projections of the input sequence itself.
"""
from __future__ import annotations

import math

import numpy as np

from . import functional as F
from .nn import LayerNorm, Linear, Module, param
from .tensor import (
    ShapeError,
    Tensor,
    add,
    broadcast_to,
    exp,
    make_op,
    matmul,
    mul,
    neg,
    reshape,
    softplus,
    split,
    stack,
    take,
)


def scan_core(u: Tensor, delta: Tensor, A: Tensor, Bm: Tensor, Cm: Tensor, D: Tensor) -> Tensor:
    """Run ``G`` independent scans at once.

    Shapes: ``u``/``delta`` [G,B,L,E], ``A`` [G,E,N], ``Bm``/``Cm`` [G,B,L,N],
    ``D`` [G,E]. Returns ``y`` [G,B,L,E].
    """
    G, Bsz, L, E = u.shape
    N = A.shape[-1]
    if delta.shape != u.shape or A.shape != (G, E, N) or D.shape != (G, E):
        raise ShapeError(f"scan_core: u {u.shape}, delta {delta.shape}, A {A.shape}, D {D.shape}")
    if Bm.shape != (G, Bsz, L, N) or Cm.shape != (G, Bsz, L, N):
        raise ShapeError(f"scan_core: B {Bm.shape} / C {Cm.shape} vs expected {(G, Bsz, L, N)}")
    y, backward = _scan_arrays(u.data, delta.data, A.data, Bm.data, Cm.data, D.data)
    return make_op(y, (u, delta, A, Bm, Cm, D), backward)


def _scan_arrays(ud, dd, Ad, Bd, Cd, Dd):
    L = ud.shape[2]
    # time-major working layout so each recurrence step touches contiguous memory
    ut = np.ascontiguousarray(ud.transpose(2, 0, 1, 3))  # L,G,B,E
    dt = np.ascontiguousarray(dd.transpose(2, 0, 1, 3))
    Bt = np.ascontiguousarray(Bd.transpose(2, 0, 1, 3))  # L,G,B,N
    Ct = np.ascontiguousarray(Cd.transpose(2, 0, 1, 3))
    Ab = Ad[None, :, None]  # 1,G,1,E,N
    dA = np.exp(dt[..., None] * Ab)  # L,G,B,E,N
    hs = (dt * ut)[..., None] * Bt[:, :, :, None, :]  # becomes the state history in place
    for t in range(1, L):
        hs[t] += dA[t] * hs[t - 1]
    yt = (hs @ Ct[..., None])[..., 0] + ut * Dd[None, :, None, :]
    y = np.ascontiguousarray(yt.transpose(1, 2, 0, 3))

    def backward(gy):
        gyt = np.ascontiguousarray(gy.transpose(2, 0, 1, 3))
        gD = (gyt * ut).sum(axis=(0, 2))
        gCt = (gyt[..., None, :] @ hs)[..., 0, :]
        ghs = gyt[..., None] * Ct[:, :, :, None, :]
        for t in range(L - 2, -1, -1):
            ghs[t] += dA[t + 1] * ghs[t + 1]
        # d/d(delta*A) is zero at t=0 (zero initial state)
        gArg = np.zeros_like(hs)
        np.multiply(ghs[1:], hs[:-1], out=gArg[1:])
        gArg[1:] *= dA[1:]
        gBu = (ghs @ Bt[..., None])[..., 0]  # d/d(delta*u)
        g_delta = (gArg * Ab).sum(axis=-1) + gBu * ut
        gA = np.einsum("lgbe,lgben->gen", dt, gArg, optimize=True)
        gut = gyt * Dd[None, :, None, :] + gBu * dt
        gBt = ((dt * ut)[..., None, :] @ ghs)[..., 0, :]
        back = lambda v: np.ascontiguousarray(v.transpose(1, 2, 0, 3))  # noqa: E731
        return back(gut), back(g_delta), gA, back(gBt), back(gCt), gD

    return y, backward


class SsmParams(Module):
    """Parameters for ``G`` parallel scans (one per direction)."""

    def __init__(self, E: int, N: int, rng: np.random.Generator, dtype=np.float64, G: int = 1, dt_rank: int | None = None):
        R = dt_rank or max(1, math.ceil(E / 16))
        self.E, self.N, self.R, self.G = E, N, R, G
        self.x_proj = param(rng.uniform(-1, 1, (G, E, R + 2 * N)) / math.sqrt(E), dtype)
        self.dt_proj = param(rng.uniform(-1, 1, (G, R, E)) * R**-0.5, dtype)
        dt = np.exp(rng.uniform(math.log(1e-3), math.log(1e-1), (G, E)))
        self.dt_bias = param(dt + np.log(-np.expm1(-dt)), dtype)  # inverse softplus
        self.A_log = param(np.log(np.broadcast_to(np.arange(1, N + 1, dtype=np.float64), (G, E, N))), dtype)
        self.D = param(np.ones((G, E)), dtype)

    def A(self) -> Tensor:
        return neg(exp(self.A_log))

    def project(self, u: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """Input-dependent ``delta`` [G,B,L,E], ``B`` and ``C`` [G,B,L,N]."""
        G, Bsz, L, E = u.shape
        xdbl = reshape(matmul(reshape(u, (G, Bsz * L, E)), self.x_proj), (G, Bsz, L, -1))
        dt_low, Bm, Cm = split(xdbl, [self.R, self.N, self.N], axis=-1)
        dt = reshape(matmul(reshape(dt_low, (G, Bsz * L, self.R)), self.dt_proj), (G, Bsz, L, E))
        bias = broadcast_to(reshape(self.dt_bias, (G, 1, 1, E)), (G, Bsz, L, E))
        return softplus(add(dt, bias)), Bm, Cm


def selective_scan(u: Tensor, p: SsmParams) -> Tensor:
    """Scan a [B,L,E] sequence with single-direction parameters."""
    if p.G != 1:
        raise ValueError("selective_scan expects single-direction parameters (G=1)")
    B, L, E = u.shape
    ug = reshape(u, (1, B, L, E))
    delta, Bm, Cm = p.project(ug)
    y = scan_core(ug, delta, p.A(), Bm, Cm, p.D)
    return reshape(y, (B, L, E))


def direction_orders(H: int, W: int) -> list[np.ndarray]:
    """Flat-index orders: row-major, row-major reversed, column-major, column-major reversed."""
    grid = np.arange(H * W).reshape(H, W)
    row = grid.ravel()
    col = grid.T.ravel()
    return [row, row[::-1].copy(), col, col[::-1].copy()]


def ss2d_directions(x: Tensor, p: SsmParams) -> list[Tensor]:
    """Per-direction scan outputs mapped back onto the grid, each [B,H,W,E]."""
    B, H, W, E = x.shape
    if p.G != 4:
        raise ValueError("ss2d needs four-direction parameters (G=4)")
    L = H * W
    flat = reshape(x, (B, L, E))
    orders = direction_orders(H, W)
    u = stack([take(flat, o, axis=1) for o in orders], axis=0)  # 4,B,L,E
    delta, Bm, Cm = p.project(u)
    y = scan_core(u, delta, p.A(), Bm, Cm, p.D)
    out = []
    for g, o in enumerate(orders):
        yg = reshape(y[g], (B, L, E))
        out.append(reshape(take(yg, np.argsort(o), axis=1), (B, H, W, E)))
    return out


class SS2D(Module):
    """in-proj -> depthwise conv -> 4-direction scan -> norm -> gate -> out-proj."""

    def __init__(self, C: int, rng: np.random.Generator, dtype=np.float64, state_dim: int = 8, expand: int = 2):
        E = expand * C
        self.E = E
        self.in_proj = Linear(C, 2 * E, rng, dtype)
        self.conv_w = param(rng.uniform(-1, 1, (E, 1, 3, 3)) / 3.0, dtype)
        self.conv_b = param(np.zeros(E), dtype)
        self.ssm = SsmParams(E, state_dim, rng, dtype, G=4)
        self.out_norm = LayerNorm(E, dtype)
        self.out_proj = Linear(E, C, rng, dtype)

    def forward(self, x: Tensor) -> Tensor:
        """Channels-last [B,H,W,C] -> [B,H,W,C]."""
        xz = self.in_proj(x)
        xin, z = split(xz, 2, axis=-1)
        xc = F.conv2d(F.to_channels_first(xin), self.conv_w, self.conv_b, padding=1, groups=self.E)
        xc = F.to_channels_last(F.silu(xc))
        parts = ss2d_directions(xc, self.ssm)
        y = add(add(parts[0], parts[1]), add(parts[2], parts[3]))
        y = mul(self.out_norm(y), F.silu(z))
        return self.out_proj(y)


def ss2d(x: Tensor, block: SS2D) -> Tensor:
    """[B,C,H,W] wrapper around :class:`SS2D`."""
    return F.to_channels_first(block(F.to_channels_last(x)))


class VSSBlock(Module):
    def __init__(self, C: int, rng: np.random.Generator, dtype=np.float64, state_dim: int = 8, mlp_ratio: int = 2, zero_init: bool = False):
        self.norm1 = LayerNorm(C, dtype)
        self.ss2d = SS2D(C, rng, dtype, state_dim)
        self.norm2 = LayerNorm(C, dtype)
        self.fc1 = Linear(C, mlp_ratio * C, rng, dtype)
        self.fc2 = Linear(mlp_ratio * C, C, rng, dtype)
        if zero_init:
            self.zero_residual()

    def zero_residual(self) -> None:
        for lin in (self.ss2d.out_proj, self.fc2):
            lin.weight.data[...] = 0.0
            lin.bias.data[...] = 0.0

    def forward(self, x: Tensor) -> Tensor:
        """Channels-last [B,H,W,C]."""
        x = add(x, self.ss2d(self.norm1(x)))
        return add(x, self.fc2(F.silu(self.fc1(self.norm2(x)))))

