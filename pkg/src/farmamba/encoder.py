"""Segmentation encoder (stem, patch embedding, VSS stages, patch merging) and U-shaped decoder."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import functional as F
from .msfm import MSFM, MsfmConfig
from .nn import Conv2d, LayerNorm, Linear, Module
from .ssm import VSSBlock
from .tensor import ShapeError, Tensor, concat


@dataclass
class EncoderConfig:
    base_channels: int = 16
    depths: tuple[int, ...] = (2, 2, 2, 2)
    state_dim: int = 8
    patch: int = 4
    merge: int = 2
    num_classes: int = 3
    in_channels: int = 3
    zero_init_residual: bool = False
    stem_skip: bool = False

    def __post_init__(self):
        self.depths = tuple(int(d) for d in self.depths)
        if len(self.depths) != 4:
            raise ValueError(f"encoder.depths needs four stages, got {self.depths}")

    @property
    def stem_channels(self) -> int:
        return max(self.base_channels // 2, 1)

    def stage_channels(self, i: int) -> int:
        return self.base_channels * self.merge ** i

    @property
    def divisor(self) -> int:
        return self.patch * self.merge ** (len(self.depths) - 1)


class PatchMerge(Module):
    """2x2 neighbourhood concat -> LayerNorm -> linear to 2C (channels-last)."""

    def __init__(self, C: int, rng, dtype, merge: int = 2):
        self.merge = merge
        self.norm = LayerNorm(merge * merge * C, dtype)
        self.reduce = Linear(merge * merge * C, merge * C, rng, dtype, bias=False)

    def forward(self, x: Tensor) -> Tensor:
        t = F.space_to_depth(F.to_channels_first(x), self.merge)
        return self.reduce(self.norm(t))


class Encoder(Module):
    """Stem, 4x4 patch embedding and up to four VSS stages.

    ``msfm_stages`` lists 1-based stages whose output passes through an MSFM.
    ``num_stages`` < 4 builds a truncated copy (used by the reconstruction branch).
    """

    def __init__(
        self,
        cfg: EncoderConfig,
        rng: np.random.Generator,
        dtype=np.float64,
        msfm: MsfmConfig | None = None,
        msfm_stages: tuple[int, ...] = (1,),
        num_stages: int = 4,
    ):
        self.cfg = cfg
        Cs, C = cfg.stem_channels, cfg.base_channels
        self.stem1 = Conv2d(cfg.in_channels, Cs, 3, rng, dtype)
        self.stem2 = Conv2d(Cs, Cs, 3, rng, dtype)
        self.embed = Linear(cfg.patch * cfg.patch * Cs, C, rng, dtype)
        self.embed_norm = LayerNorm(C, dtype)
        self.stages = []
        self.merges = []
        self.msfm = []
        for i in range(num_stages):
            Ci = cfg.stage_channels(i)
            if i > 0:
                self.merges.append(PatchMerge(cfg.stage_channels(i - 1), rng, dtype, cfg.merge))
            self.stages.append(
                [VSSBlock(Ci, rng, dtype, cfg.state_dim, zero_init=cfg.zero_init_residual) for _ in range(cfg.depths[i])]
            )
        self.msfm_at = {}
        if msfm is not None:
            for s in msfm_stages:
                if not 1 <= s <= num_stages:
                    raise ValueError(f"msfm stage {s} outside 1..{num_stages}")
                mcfg = MsfmConfig(**{**msfm.__dict__, "channels": cfg.stage_channels(s - 1)})
                self.msfm_at[s] = len(self.msfm)
                self.msfm.append(MSFM(mcfg, rng, dtype))

    def check_input(self, image: Tensor) -> None:
        if image.ndim != 4 or image.shape[1] != self.cfg.in_channels:
            raise ShapeError(f"encoder expects [B,{self.cfg.in_channels},H,W], got {image.shape}")
        d = self.cfg.patch * self.cfg.merge ** (len(self.stages) - 1)
        H, W = image.shape[-2:]
        if H % d or W % d:
            raise ShapeError(f"input {H}x{W} must be divisible by {d}")

    def stem(self, image: Tensor) -> Tensor:
        return F.silu(self.stem2(F.silu(self.stem1(image))))

    def forward(self, image: Tensor, num_stages: int | None = None) -> tuple[list[Tensor], Tensor]:
        """Return (stage features [B,C_i,H_i,W_i], stem features).

        ``num_stages`` stops early; the divisibility check still covers every built stage.
        """
        self.check_input(image)
        s = self.stem(image)
        x = self.embed_norm(self.embed(F.space_to_depth(s, self.cfg.patch)))
        feats = []
        for i, blocks in enumerate(self.stages[:num_stages]):
            if i > 0:
                x = self.merges[i - 1](x)
            for blk in blocks:
                x = blk(x)
            f = F.to_channels_first(x)
            if (i + 1) in self.msfm_at:
                f = self.msfm[self.msfm_at[i + 1]](f)
                x = F.to_channels_last(f)
            feats.append(f)
        return feats, s


def encode(image: Tensor, enc: Encoder) -> list[Tensor]:
    return enc(image)[0]


class ConvBlock(Module):
    def __init__(self, c_in: int, c_out: int, rng, dtype):
        self.conv1 = Conv2d(c_in, c_out, 3, rng, dtype)
        self.conv2 = Conv2d(c_out, c_out, 3, rng, dtype)

    def forward(self, x: Tensor) -> Tensor:
        return F.silu(self.conv2(F.silu(self.conv1(x))))


class Decoder(Module):
    """Upsample x2 + skip concat + two convs per level; x4 upsample; 1x1 head."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator, dtype=np.float64):
        self.cfg = cfg
        ch = [cfg.stage_channels(i) for i in range(4)]
        self.levels = [ConvBlock(ch[i + 1] + ch[i], ch[i], rng, dtype) for i in (2, 1, 0)]
        C = ch[0]
        if cfg.stem_skip:
            self.fuse_stem = Conv2d(C + cfg.stem_channels, C, 3, rng, dtype)
        self.head = Conv2d(C, cfg.num_classes, 1, rng, dtype)

    def forward(self, feats: list[Tensor], stem: Tensor | None = None) -> Tensor:
        if len(feats) != 4:
            raise ShapeError(f"decoder needs four stage features, got {len(feats)}")
        x = feats[3]
        for level, skip in zip(self.levels, (feats[2], feats[1], feats[0])):
            up = F.upsample_nearest(x, self.cfg.merge)
            if up.shape[-2:] != skip.shape[-2:]:
                raise ShapeError(f"skip {skip.shape} does not match upsampled {up.shape}")
            x = level(concat([up, skip], axis=1))
        x = F.upsample_nearest(x, self.cfg.patch)
        if self.cfg.stem_skip:
            if stem is None:
                raise ShapeError("decoder configured with stem_skip but no stem features given")
            x = F.silu(self.fuse_stem(concat([x, stem], axis=1)))
        return self.head(x)


def decode(feats: list[Tensor], dec: Decoder, stem: Tensor | None = None) -> Tensor:
    return dec(feats, stem)

