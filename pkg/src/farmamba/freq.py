"""Orthonormal 2-D transforms on [B,C,H,W] tensors and frequency band masks.

* ``dwt2``/``idwt2``: single-level Haar (db1), rows then columns.
* ``fft2``/``ifft2``: radix-2 decimation-in-time FFT. The forward transform is
  unnormalised and the inverse carries ``1/(H*W)``. Spectra are kept as
  separate real and imaginary planes.
* ``dct2``/``idct2``: orthonormal DCT-II and its inverse (DCT-III).

All of them are tape ops, so gradients flow through forward and inverse.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .tensor import Tensor, ShapeError, add, einsum, getitem, make_op, mul, mul_const, reshape, roll, stack, sub

@dataclass
class SubbandSet:
    """Haar sub-bands. First letter: filter along width; second: along height."""

    ll: Tensor
    lh: Tensor
    hl: Tensor
    hh: Tensor

    def as_list(self) -> list[Tensor]:
        return [self.ll, self.lh, self.hl, self.hh]


@dataclass
class Spectrum:
    re: Tensor
    im: Tensor
    centered: bool = False

    @property
    def shape(self):
        return self.re.shape


@dataclass
class DctSpectrum:
    coef: Tensor

    @property
    def shape(self):
        return self.coef.shape


@dataclass
class BandMaskSet:
    kind: str
    masks: np.ndarray  # bool [K, H, W]

    @property
    def count(self) -> int:
        return self.masks.shape[0]

    def __iter__(self):
        return iter(self.masks)

    def __getitem__(self, k: int) -> np.ndarray:
        return self.masks[k]


# -- wavelet ----------------------------------------------------------------------

def dwt2(x: Tensor) -> SubbandSet:
    H, W = x.shape[-2:]
    if H % 2 or W % 2:
        raise ShapeError(f"dwt2 needs even extents, got {H}x{W}; zero-pad the input first")
    a = getitem(x, (..., slice(0, None, 2), slice(0, None, 2)))
    b = getitem(x, (..., slice(0, None, 2), slice(1, None, 2)))
    c = getitem(x, (..., slice(1, None, 2), slice(0, None, 2)))
    d = getitem(x, (..., slice(1, None, 2), slice(1, None, 2)))
    top_l, top_h = add(a, b), sub(a, b)
    bot_l, bot_h = add(c, d), sub(c, d)
    return SubbandSet(
        ll=mul(add(top_l, bot_l), 0.5),
        lh=mul(sub(top_l, bot_l), 0.5),
        hl=mul(add(top_h, bot_h), 0.5),
        hh=mul(sub(top_h, bot_h), 0.5),
    )


def idwt2(s: SubbandSet) -> Tensor:
    shapes = {t.shape for t in s.as_list()}
    if len(shapes) != 1:
        raise ShapeError(f"idwt2: sub-band shapes differ: {sorted(shapes)}")
    p, m = add(s.ll, s.lh), sub(s.ll, s.lh)
    q, n = add(s.hl, s.hh), sub(s.hl, s.hh)
    a, b = mul(add(p, q), 0.5), mul(sub(p, q), 0.5)
    c, d = mul(add(m, n), 0.5), mul(sub(m, n), 0.5)
    *lead, h, w = a.shape
    top = reshape(stack([a, b], axis=-1), (*lead, h, 2 * w))
    bot = reshape(stack([c, d], axis=-1), (*lead, h, 2 * w))
    return reshape(stack([top, bot], axis=-2), (*lead, 2 * h, 2 * w))


# -- Fourier ----------------------------------------------------------------------

def is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@lru_cache(maxsize=None)
def _bitrev(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def fft_axis(z: np.ndarray, axis: int, sign: int = -1) -> np.ndarray:
    """Unnormalised radix-2 DFT of a complex array along ``axis``."""
    n = z.shape[axis]
    if not is_pow2(n):
        raise ValueError(f"radix-2 FFT needs a power-of-two extent, got {n}")
    z = np.moveaxis(z, axis, -1)[..., _bitrev(n)]
    lead = z.shape[:-1]
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(sign * 2j * np.pi * np.arange(half) / size)
        blocks = z.reshape(lead + (n // size, size))
        even = blocks[..., :half]
        odd = blocks[..., half:] * tw
        z = np.concatenate([even + odd, even - odd], axis=-1).reshape(lead + (n,))
        size *= 2
    return np.moveaxis(z, -1, axis)


def _fft2_np(z: np.ndarray, sign: int) -> np.ndarray:
    return fft_axis(fft_axis(z, -2, sign), -1, sign)


def _complex_op(re: Tensor, im: Tensor | None, inverse: bool) -> Tensor:
    H, W = re.shape[-2:]
    if not (is_pow2(H) and is_pow2(W)):
        raise ValueError(f"fft2 needs power-of-two extents, got {H}x{W}; zero-pad first")
    z = re.data.astype(np.complex128) if im is None else re.data + 1j * im.data
    sign, scale = (1, 1.0 / (H * W)) if inverse else (-1, 1.0)
    y = _fft2_np(z, sign) * scale
    dtype = re.dtype
    out = np.stack([y.real, y.imag]).astype(dtype)

    def backward(g):
        gz = _fft2_np(g[0] + 1j * g[1], -sign) * scale
        gre = gz.real.astype(dtype)
        return (gre,) if im is None else (gre, gz.imag.astype(dtype))

    parents = (re,) if im is None else (re, im)
    return make_op(out, parents, backward)


def fft2(x: Tensor) -> Spectrum:
    out = _complex_op(x, None, inverse=False)
    return Spectrum(getitem(out, 0), getitem(out, 1), centered=False)


def fftshift(s: Spectrum) -> Spectrum:
    if s.centered:
        return s
    H, W = s.shape[-2:]
    sh, ax = (H // 2, W // 2), (-2, -1)
    return Spectrum(roll(s.re, sh, ax), roll(s.im, sh, ax), centered=True)


def ifftshift(s: Spectrum) -> Spectrum:
    if not s.centered:
        return s
    H, W = s.shape[-2:]
    sh, ax = (-(H // 2), -(W // 2)), (-2, -1)
    return Spectrum(roll(s.re, sh, ax), roll(s.im, sh, ax), centered=False)


def ifft2_complex(s: Spectrum) -> Spectrum:
    s = ifftshift(s)
    out = _complex_op(s.re, s.im, inverse=True)
    return Spectrum(getitem(out, 0), getitem(out, 1))


def ifft2(s: Spectrum) -> Tensor:
    """Inverse FFT keeping the real part (exact for Hermitian spectra)."""
    return ifft2_complex(s).re


# -- cosine -----------------------------------------------------------------------

@lru_cache(maxsize=None)
def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II matrix ``M[u, x]``."""
    u = np.arange(n)[:, None]
    x = np.arange(n)[None, :]
    m = np.cos(np.pi * (2 * x + 1) * u / (2 * n))
    m[0] *= math.sqrt(1.0 / n)
    m[1:] *= math.sqrt(2.0 / n)
    return m


def _const(m: np.ndarray, dtype) -> Tensor:
    return Tensor(m.astype(dtype))


def dct2(x: Tensor) -> DctSpectrum:
    H, W = x.shape[-2:]
    lead = x.shape[:-2]
    x4 = reshape(x, (-1, 1, H, W)) if len(lead) != 2 else x
    t = einsum("uh,bchw->bcuw", _const(dct_matrix(H), x.dtype), x4)
    t = einsum("bcuw,vw->bcuv", t, _const(dct_matrix(W), x.dtype))
    return DctSpectrum(reshape(t, x.shape) if len(lead) != 2 else t)


def idct2(s: DctSpectrum) -> Tensor:
    X = s.coef
    H, W = X.shape[-2:]
    lead = X.shape[:-2]
    X4 = reshape(X, (-1, 1, H, W)) if len(lead) != 2 else X
    t = einsum("uh,bcuw->bchw", _const(dct_matrix(H), X.dtype), X4)
    t = einsum("bchv,vw->bchw", t, _const(dct_matrix(W), X.dtype))
    return reshape(t, X.shape) if len(lead) != 2 else t


# -- band masks ----------------------------------------------------------------------

def make_band_masks(kind: str, H: int, W: int, K: int) -> BandMaskSet:
    """Partition an HxW coefficient plane into ``K`` disjoint bands.

    ``ring`` works on a centred Fourier layout: bands are annuli of radius
    thresholds ``k/K`` of the half-diagonal, innermost first. ``wedge`` works
    on a DCT layout: bands are diagonal strips of ``u+v`` starting at the DC
    corner.
    """
    if K < 1:
        raise ValueError(f"band count must be >= 1, got {K}")
    if H < 2 or W < 2:
        raise ValueError(f"band masks need H, W >= 2, got {H}x{W}")
    band = np.empty((H, W), dtype=np.int64)
    if kind == "ring":
        u = np.arange(H)[:, None] - H // 2
        v = np.arange(W)[None, :] - W // 2
        r = np.sqrt(u**2 + v**2)
        r_max = math.hypot(H / 2, W / 2)
        thresholds = np.array([k / K * r_max for k in range(1, K)])
        band[...] = np.searchsorted(thresholds, r, side="right")
    elif kind == "wedge":
        s = np.arange(H)[:, None] + np.arange(W)[None, :]
        thresholds = np.array([math.ceil(k * (H + W - 1) / K) for k in range(1, K)])
        band[...] = np.searchsorted(thresholds, s, side="right")
    else:
        raise ValueError(f"unknown mask kind {kind!r}; expected 'ring' or 'wedge'")
    masks = np.stack([band == k for k in range(K)])
    empty = [k + 1 for k in range(K) if not masks[k].any()]
    if empty:
        raise ValueError(f"{K} {kind} bands exceed what a {H}x{W} plane can represent (empty bands {empty})")
    return BandMaskSet(kind, masks)


def apply_mask(spec, mask: np.ndarray):
    mask = np.asarray(mask)
    if mask.shape != spec.shape[-2:]:
        raise ShapeError(f"mask {mask.shape} does not match spectrum {spec.shape[-2:]}")
    if isinstance(spec, Spectrum):
        return Spectrum(mul_const(spec.re, mask), mul_const(spec.im, mask), spec.centered)
    if isinstance(spec, DctSpectrum):
        return DctSpectrum(mul_const(spec.coef, mask))
    raise TypeError(f"apply_mask expects Spectrum or DctSpectrum, got {type(spec).__name__}")


def pad_pow2(x: Tensor) -> tuple[Tensor, tuple[int, int]]:
    """Zero-pad the trailing two axes up to powers of two."""
    from .tensor import pad

    H, W = x.shape[-2:]
    Hp, Wp = 1 << max(H - 1, 0).bit_length(), 1 << max(W - 1, 0).bit_length()
    if (Hp, Wp) == (H, W):
        return x, (H, W)
    widths = [(0, 0)] * (x.ndim - 2) + [(0, Hp - H), (0, Wp - W)]
    return pad(x, widths), (H, W)


def fft_bands(x: Tensor, masks: BandMaskSet) -> list[Tensor]:
    """Spatial reconstructions of each ring band; they sum to ``x``.

    ``masks`` must be built for the power-of-two padded extent.
    """
    xp, (H, W) = pad_pow2(x)
    spec = fftshift(fft2(xp))
    out = []
    for m in masks:
        band = ifft2(apply_mask(spec, m))
        out.append(getitem(band, (..., slice(0, H), slice(0, W))) if band.shape != x.shape else band)
    return out


def dct_bands(x: Tensor, masks: BandMaskSet) -> list[Tensor]:
    """Spatial reconstructions of each wedge band; they sum to ``x``."""
    spec = dct2(x)
    return [idct2(apply_mask(spec, m)) for m in masks]


def dwt_bands(x: Tensor) -> list[Tensor]:
    """Each Haar sub-band inverted on its own (others zeroed); they sum to ``x``."""
    s = dwt2(x)
    zero = mul(s.ll, 0.0)
    parts = s.as_list()
    out = []
    for i in range(4):
        sel = [parts[j] if j == i else zero for j in range(4)]
        out.append(idwt2(SubbandSet(*sel)))
    return out
