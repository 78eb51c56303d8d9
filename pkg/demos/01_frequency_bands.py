"""Split a synthetic scan into frequency bands three ways and see where the energy goes.

Run: python demos/01_frequency_bands.py [--out bands.png]
"""
import argparse

import numpy as np
from PIL import Image

from farmamba import freq
from farmamba.data import SyntheticSpec, render
from farmamba.tensor import Tensor

parser = argparse.ArgumentParser()
parser.add_argument("--out", help="optional PNG with one tile per band")
args = parser.parse_args()

img, labels = render(SyntheticSpec(size=64), np.random.default_rng(7))
x = Tensor(img[None, None])
total = float((img**2).sum())
print(f"image 64x64, {len(np.unique(labels))} classes, energy {total:.1f}\n")

# Haar: four half-resolution sub-bands; the transform is orthonormal so energy splits exactly
s = freq.dwt2(x)
print("Haar sub-bands (share of energy)")
for name, band in zip(("LL", "LH", "HL", "HH"), s.as_list()):
    print(f"  {name}: {float((band.data**2).sum()) / total:6.2%}")

# FFT with concentric rings and DCT with wedges: K spatial maps that add back to the image
tiles = []
for kind, split in (("ring", freq.fft_bands), ("wedge", freq.dct_bands)):
    masks = freq.make_band_masks(kind, 64, 64, 3)
    bands = split(x, masks)
    err = np.abs(sum(b.data for b in bands) - x.data).max()
    shares = [float((b.data**2).sum()) / total for b in bands]
    print(f"\n{kind} bands via {'FFT' if kind == 'ring' else 'DCT'}: " + ", ".join(f"{v:.2%}" for v in shares))
    print(f"  bands sum back to the image within {err:.1e}")
    tiles += [b.data[0, 0] for b in bands]

if args.out:
    norm = [(t - t.min()) / (np.ptp(t) + 1e-12) for t in [img] + tiles]
    grid = np.concatenate(norm, axis=1)
    Image.fromarray(np.uint8(255 * grid)).save(args.out)
    print(f"\nwrote {args.out}: image, 3 ring bands, 3 wedge bands")
