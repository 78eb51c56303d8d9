"""Multi-scale frequency modules (wavelet, Fourier and cosine variants) and CBAM."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import freq
from . import functional as F
from .nn import Conv2d, Linear, Module
from .tensor import Tensor, add, broadcast_to, concat, max_, mean, mul, reshape, split

VARIANTS = ("dwt", "fft", "dct")


@dataclass
class MsfmConfig:
    variant: str = "dwt"
    bands: int = 3
    channels: int = 16
    kernel_scales: tuple[int, ...] = (1, 3, 5)
    residual: bool = True
    reduction: int = 4

    def __post_init__(self):
        self.kernel_scales = tuple(int(k) for k in self.kernel_scales)
        if self.variant not in VARIANTS:
            raise ValueError(f"msfm variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.bands < 1:
            raise ValueError("msfm.bands must be >= 1")
        if not self.kernel_scales or any(k < 1 or k % 2 == 0 for k in self.kernel_scales):
            raise ValueError(f"msfm.kernel_scales must be non-empty odd ints, got {self.kernel_scales}")


class CBAM(Module):
    """Channel gate from pooled descriptors, then a 7x7 spatial gate."""

    def __init__(self, C: int, rng: np.random.Generator, dtype=np.float64, reduction: int = 4):
        if C < reduction:
            raise ValueError(f"CBAM needs channels >= reduction ratio ({C} < {reduction})")
        if C % reduction:
            raise ValueError(f"CBAM channels {C} not divisible by reduction ratio {reduction}")
        self.fc1 = Linear(C, C // reduction, rng, dtype)
        self.fc2 = Linear(C // reduction, C, rng, dtype)
        self.spatial = Conv2d(2, 1, 7, rng, dtype)

    def channel_gate(self, x: Tensor) -> Tensor:
        mlp = lambda v: self.fc2(F.relu(self.fc1(v)))  # noqa: E731
        return F.sigmoid(add(mlp(mean(x, axis=(2, 3))), mlp(max_(x, axis=(2, 3)))))

    def spatial_gate(self, x: Tensor) -> Tensor:
        pooled = concat([mean(x, axis=1, keepdims=True), max_(x, axis=1, keepdims=True)], axis=1)
        return F.sigmoid(self.spatial(pooled))

    def forward(self, x: Tensor) -> Tensor:
        B, C, H, W = x.shape
        xc = mul(x, broadcast_to(reshape(self.channel_gate(x), (B, C, 1, 1)), x.shape))
        return mul(xc, broadcast_to(self.spatial_gate(xc), x.shape))


def cbam(x: Tensor, p: CBAM) -> Tensor:
    return p(x)


class MSFM(Module):
    """Frequency-band enhancement with a zero-initialised fusion projection.

    ``forward(x) = x + fuse(enhanced)`` when ``residual`` is on. The
    ``enhanced`` map depends on the variant:

    * dwt: CBAM on each Haar sub-band; the three detail bands are concatenated,
      filtered by parallel convolutions at ``kernel_scales`` (summed), projected
      back to three detail slots and inverted together with the gated LL band.
    * fft / dct: the spectrum is split into ``bands`` disjoint ring / wedge bands,
      each band is inverted to the spatial domain and filtered by its own conv
      (band ``b`` uses ``kernel_scales[min(b, len - 1)]``, smallest first), and
      the band outputs are summed.
    """

    def __init__(self, cfg: MsfmConfig, rng: np.random.Generator, dtype=np.float64):
        self.cfg = cfg
        C = cfg.channels
        self.gates = True
        if cfg.variant == "dwt":
            self.cbam = [CBAM(C, rng, dtype, cfg.reduction) for _ in range(4)]
            self.convs = [Conv2d(3 * C, 3 * C, k, rng, dtype) for k in cfg.kernel_scales]
            self.proj = Conv2d(3 * C, 3 * C, 1, rng, dtype)
        else:
            scales = cfg.kernel_scales
            self.convs = [Conv2d(C, C, scales[min(b, len(scales) - 1)], rng, dtype) for b in range(cfg.bands)]
        self.fuse = Conv2d(C, C, 1, rng, dtype)
        self.fuse.weight.data[...] = 0.0
        self._masks: dict[tuple[int, int], freq.BandMaskSet] = {}

    def masks(self, H: int, W: int) -> freq.BandMaskSet:
        if (H, W) not in self._masks:
            kind = "ring" if self.cfg.variant == "fft" else "wedge"
            self._masks[(H, W)] = freq.make_band_masks(kind, H, W, self.cfg.bands)
        return self._masks[(H, W)]

    def set_identity(self) -> None:
        """Make every conv/projection an identity map (parallel convs split 1/n each)."""
        n = len(self.convs)
        for conv in self.convs:
            conv.set_identity()
            if self.cfg.variant == "dwt":
                conv.weight.data *= 1.0 / n
        if self.cfg.variant == "dwt":
            self.proj.set_identity()
        self.fuse.set_identity()

    def band_maps(self, x: Tensor) -> list[Tensor]:
        """Spatial band reconstructions before any learned processing."""
        if self.cfg.variant == "dwt":
            return freq.dwt_bands(x)
        if self.cfg.variant == "fft":
            xp, _ = freq.pad_pow2(x)
            return freq.fft_bands(x, self.masks(*xp.shape[-2:]))
        return freq.dct_bands(x, self.masks(*x.shape[-2:]))

    def _gate(self, t: Tensor, i: int) -> Tensor:
        return self.cbam[i](t) if self.gates else t

    def enhance(self, x: Tensor) -> Tensor:
        if self.cfg.variant == "dwt":
            s = freq.dwt2(x)
            ll = self._gate(s.ll, 0)
            details = concat([self._gate(s.lh, 1), self._gate(s.hl, 2), self._gate(s.hh, 3)], axis=1)
            acc = self.convs[0](details)
            for conv in self.convs[1:]:
                acc = add(acc, conv(details))
            lh, hl, hh = split(self.proj(acc), 3, axis=1)
            return freq.idwt2(freq.SubbandSet(ll, lh, hl, hh))
        bands = self.band_maps(x)
        acc = self.convs[0](bands[0])
        for conv, band in zip(self.convs[1:], bands[1:]):
            acc = add(acc, conv(band))
        return acc

    def forward(self, x: Tensor) -> Tensor:
        if self.cfg.variant == "dwt" and (x.shape[-1] % 2 or x.shape[-2] % 2):
            raise ValueError(f"dwt MSFM needs even spatial extents, got {x.shape[-2:]}")
        out = self.fuse(self.enhance(x))
        return add(x, out) if self.cfg.residual else out


def _run(x: Tensor, m: MSFM, variant: str) -> Tensor:
    if m.cfg.variant != variant:
        raise ValueError(f"module is a {m.cfg.variant!r} MSFM, not {variant!r}")
    return m(x)


def msfm_dwt(x: Tensor, m: MSFM) -> Tensor:
    return _run(x, m, "dwt")


def msfm_fft(x: Tensor, m: MSFM) -> Tensor:
    return _run(x, m, "fft")


def msfm_dct(x: Tensor, m: MSFM) -> Tensor:
    return _run(x, m, "dct")
