"""Reconstruction branch: input degradation, label-guided region attention and
an auxiliary encoder that rebuilds the main encoder's shallow features."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import functional as F
from .encoder import Encoder, EncoderConfig
from .msfm import MsfmConfig
from .nn import Conv2d, Linear, Module
from .tensor import ShapeError, Tensor, add, add_const, matmul, mul, reshape, take, transpose

LARGE = 1e9  # exp(-LARGE) underflows to exactly 0 in both precisions

BINOMIAL_3x3 = np.outer([1.0, 2.0, 1.0], [1.0, 2.0, 1.0]) / 16.0


@dataclass
class DegradeConfig:
    downscale: int = 4
    sigma_noise: float = 0.01
    enabled: bool = True

    def __post_init__(self):
        if self.sigma_noise < 0:
            raise ValueError(f"sigma_noise must be >= 0, got {self.sigma_noise}")
        if self.downscale < 1:
            raise ValueError(f"downscale must be >= 1, got {self.downscale}")


@dataclass
class SsraeConfig:
    enabled: bool = False
    sigma_noise: float = 0.01
    target_stage: int = 1
    msfm: bool = True
    tie_weights: bool = False
    heads: int = 2
    downscale: int = 4
    degrade: bool = True

    def __post_init__(self):
        if not 1 <= self.target_stage <= 4:
            raise ValueError(f"ssrae.target_stage must be in 1..4, got {self.target_stage}")
        if self.heads < 1:
            raise ValueError("ssrae.heads must be >= 1")
        self.degrade_config()  # validates sigma / downscale

    def degrade_config(self) -> DegradeConfig:
        return DegradeConfig(self.downscale, self.sigma_noise, self.degrade)


def _replicate_pad(x: Tensor, p: int) -> Tensor:
    H, W = x.shape[-2:]
    x = take(x, np.clip(np.arange(-p, H + p), 0, H - 1), axis=2)
    return take(x, np.clip(np.arange(-p, W + p), 0, W - 1), axis=3)


def blur(x: Tensor) -> Tensor:
    """Fixed 3x3 binomial depthwise blur with edge replication (constants pass through)."""
    C = x.shape[1]
    w = np.broadcast_to(BINOMIAL_3x3, (C, 1, 3, 3))
    return F.conv2d(_replicate_pad(x, 1), Tensor(np.array(w, dtype=x.dtype)), groups=C)


def degrade(x: Tensor, cfg: DegradeConfig, rng: np.random.Generator) -> Tensor:
    """Area-downscale, blur, then add seeded Gaussian noise. [B,C,H,W] -> [B,C,H/s,W/s]."""
    H, W = x.shape[-2:]
    s = cfg.downscale
    if H % s or W % s:
        raise ShapeError(f"degrade: {H}x{W} not divisible by downscale {s}")
    if not cfg.enabled:
        return x
    y = blur(F.avg_pool2d(x, s))
    if cfg.sigma_noise > 0:
        y = add_const(y, rng.normal(0.0, cfg.sigma_noise, y.shape))
    return y


class RegionMask:
    """Label map that turns into an additive attention bias at any feature resolution."""

    def __init__(self, labels: np.ndarray):
        labels = np.asarray(labels)
        if labels.ndim != 3 or not np.issubdtype(labels.dtype, np.integer):
            raise ShapeError(f"RegionMask expects integer labels [B,H,W], got {labels.dtype} {labels.shape}")
        self.labels = labels

    def resized(self, h: int, w: int) -> np.ndarray:
        """Nearest (cell-centre) sampling of the labels onto an h x w grid."""
        H, W = self.labels.shape[1:]
        if H % h or W % w:
            raise ShapeError(f"RegionMask: {H}x{W} labels do not tile a {h}x{w} grid")
        sh, sw = H // h, W // w
        return self.labels[:, sh // 2 :: sh, sw // 2 :: sw]

    def bias(self, h: int, w: int) -> np.ndarray:
        """[B, h*w, h*w] with 0 inside a region and -LARGE across regions."""
        flat = self.resized(h, w).reshape(self.labels.shape[0], -1)
        same = flat[:, :, None] == flat[:, None, :]
        return np.where(same, 0.0, -LARGE)


class RegionAttention(Module):
    def __init__(self, D: int, rng: np.random.Generator, dtype=np.float64, heads: int = 2, zero_init: bool = True):
        if D % heads:
            raise ValueError(f"attention width {D} not divisible by {heads} heads")
        self.heads = heads
        self.q = Linear(D, D, rng, dtype)
        self.k = Linear(D, D, rng, dtype)
        self.v = Linear(D, D, rng, dtype)
        self.out = Linear(D, D, rng, dtype)
        if zero_init:
            self.out.weight.data[...] = 0.0

    def forward(self, feat: Tensor, bias: np.ndarray | None = None) -> Tensor:
        return region_attention(feat, bias, self)


def region_attention(feat: Tensor, bias: np.ndarray | None, p: RegionAttention) -> Tensor:
    """Multi-head self-attention over [B,L,D] with an additive [B,L,L] (or [L,L]) logit bias."""
    B, L, D = feat.shape
    h = p.heads
    dh = D // h
    if bias is not None:
        bias = np.asarray(bias)
        if bias.shape[-2:] != (L, L) or bias.ndim not in (2, 3):
            raise ShapeError(f"region_attention: bias {bias.shape} does not match length {L}")

    def heads(t: Tensor) -> Tensor:
        return transpose(reshape(t, (B, L, h, dh)), (0, 2, 1, 3))

    q, k, v = heads(p.q(feat)), heads(p.k(feat)), heads(p.v(feat))
    logits = mul(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    if bias is not None:
        logits = add_const(logits, bias[:, None] if bias.ndim == 3 else bias)
    attn = F.softmax(logits, axis=-1)
    o = reshape(transpose(matmul(attn, v), (0, 2, 1, 3)), (B, L, D))
    return p.out(o)


def attention_weights(feat: Tensor, bias: np.ndarray | None, p: RegionAttention) -> np.ndarray:
    """Post-softmax weights [B,heads,L,L] (diagnostic, no tape)."""
    B, L, D = feat.shape
    h, dh = p.heads, D // p.heads
    q = p.q(feat).data.reshape(B, L, h, dh).transpose(0, 2, 1, 3)
    k = p.k(feat).data.reshape(B, L, h, dh).transpose(0, 2, 1, 3)
    logits = q @ k.transpose(0, 1, 3, 2) / math.sqrt(dh)
    if bias is not None:
        bias = np.asarray(bias)
        logits = logits + (bias[:, None] if bias.ndim == 3 else bias)
    logits -= logits.max(axis=-1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=-1, keepdims=True)


class SSRAE(Module):
    """Auxiliary encoder + region attention + 1x1 head rebuilding one main-encoder stage.

    With ``tie_weights`` the auxiliary branch runs the main encoder itself; its
    parameters are then owned (and counted) by the main model only.
    """

    def __init__(
        self,
        enc_cfg: EncoderConfig,
        cfg: SsraeConfig,
        rng: np.random.Generator,
        dtype=np.float64,
        msfm: MsfmConfig | None = None,
        msfm_stage: int = 1,
        main_encoder: Encoder | None = None,
    ):
        self.cfg = cfg
        stage = cfg.target_stage
        if cfg.tie_weights:
            if main_encoder is None:
                raise ValueError("tie_weights needs the main encoder")
            self._tied = main_encoder
        else:
            use_msfm = msfm if (cfg.msfm and msfm is not None and msfm_stage <= stage) else None
            self.encoder = Encoder(enc_cfg, rng, dtype, msfm=use_msfm, msfm_stages=(msfm_stage,), num_stages=stage)
        C = enc_cfg.stage_channels(stage - 1)
        self.attn = RegionAttention(C, rng, dtype, heads=cfg.heads)
        self.head = Conv2d(C, C, 1, rng, dtype)
        self.head.set_identity()

    @property
    def aux_encoder(self) -> Encoder:
        return self._tied if self.cfg.tie_weights else self.encoder

    def reconstruct_features(self, degraded: Tensor, labels: np.ndarray | None, size: tuple[int, int]) -> Tensor:
        """Encode a degraded image (upsampled back to ``size``) and map it onto the target stage."""
        H, W = size
        h, w = degraded.shape[-2:]
        if (H, W) != (h, w):
            if H % h or W % w or H // h != W // w:
                raise ShapeError(f"degraded {h}x{w} cannot be upsampled to {H}x{W}")
            degraded = F.upsample_nearest(degraded, H // h)
        feats, _ = self.aux_encoder(degraded, num_stages=self.cfg.target_stage)
        f = feats[self.cfg.target_stage - 1]
        B, C, fh, fw = f.shape
        seq = reshape(F.to_channels_last(f), (B, fh * fw, C))
        bias = RegionMask(labels).bias(fh, fw) if labels is not None else None
        seq = add(seq, self.attn(seq, bias))
        f = F.to_channels_first(reshape(seq, (B, fh, fw, C)))
        return self.head(f)

    def forward(self, image: Tensor, labels: np.ndarray | None, rng: np.random.Generator) -> Tensor:
        x = degrade(image, self.cfg.degrade_config(), rng)
        return self.reconstruct_features(x, labels, image.shape[-2:])
