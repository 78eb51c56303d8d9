"""Degrade an image, then watch region-masked attention keep organs apart.

Run: python demos/03_region_attention.py
"""
import numpy as np

from farmamba.data import SyntheticSpec, render
from farmamba.ssrae import DegradeConfig, RegionAttention, RegionMask, attention_weights, degrade
from farmamba.tensor import Tensor

rng = np.random.default_rng(3)
img, labels = render(SyntheticSpec(size=64), rng)
x = Tensor(np.repeat(img[None, None], 3, axis=1))

low = degrade(x, DegradeConfig(downscale=4, sigma_noise=0.01), rng)
print(f"degraded {x.shape[-2:]} -> {low.shape[-2:]}, mean abs change after re-upsampling "
      f"{np.abs(np.repeat(np.repeat(low.data, 4, -1), 4, -2) - x.data).mean():.4f}")

# attention over a 16x16 feature grid, keys restricted to the query's own class
h = w = 16
mask = RegionMask(labels[None])
grid = mask.resized(h, w)[0]
print("\nclass layout on the feature grid:")
print("\n".join("".join(".ox"[v] for v in row) for row in grid))

attn = RegionAttention(8, rng, zero_init=False)
feat = Tensor(rng.normal(size=(1, h * w, 8)))
wts = attention_weights(feat, mask.bias(h, w), attn)[0]  # heads, L, L
flat = grid.ravel()
same = flat[:, None] == flat[None, :]
print(f"\nweight on same-class keys:  {wts[:, same].sum() / (wts.shape[0] * h * w):.6f} per query")
print(f"largest cross-class weight: {wts[:, ~same].max():.1e}")

free = attention_weights(feat, None, attn)[0]
print(f"without the mask, cross-class share per query: {free[:, ~same].sum() / (free.shape[0] * h * w):.3f}")
