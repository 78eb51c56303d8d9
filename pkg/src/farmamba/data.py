"""Synthetic segmentation data and a folder-of-PNG dataset format."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter


@dataclass
class SyntheticSpec:
    size: int = 64
    num_classes: int = 3
    shapes_per_class: int = 1
    blur_sigma: float = 1.5
    speckle: float = 0.25
    bias_field: float = 0.3
    seed: int = 0
    n_train: int = 300
    n_val: int = 60

    def __post_init__(self):
        if self.size % 32:
            raise ValueError(f"image size must be divisible by 32, got {self.size}")
        if self.num_classes < 2:
            raise ValueError("need at least two classes (background + one shape class)")
        if self.blur_sigma < 0 or self.speckle < 0 or self.bias_field < 0:
            raise ValueError("blur_sigma, speckle and bias_field must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        return cls(**d)


@dataclass
class Dataset:
    images: np.ndarray  # [N,3,H,W] in [0,1]
    labels: np.ndarray  # [N,H,W] int64
    num_classes: int

    def __post_init__(self):
        if self.images.ndim != 4 or self.labels.shape != (self.images.shape[0],) + self.images.shape[2:]:
            raise ValueError(f"images {self.images.shape} and labels {self.labels.shape} do not pair up")

    def __len__(self) -> int:
        return len(self.labels)

    def batches(self, batch_size: int, rng: np.random.Generator | None = None):
        """Index arrays covering the set once; shuffled when ``rng`` is given."""
        order = rng.permutation(len(self)) if rng is not None else np.arange(len(self))
        for i in range(0, len(self), batch_size):
            yield order[i : i + batch_size]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx], self.num_classes)


def class_levels(num_classes: int) -> np.ndarray:
    """Clean intensity per class: evenly spaced in [0.15, 0.85]."""
    return np.linspace(0.15, 0.85, num_classes)


def _ellipse(yy, xx, rng, size):
    cy, cx = rng.uniform(0.25, 0.75, 2) * size
    ry, rx = rng.uniform(0.1, 0.25, 2) * size
    th = rng.uniform(0, np.pi)
    dy, dx = yy - cy, xx - cx
    u = dx * np.cos(th) + dy * np.sin(th)
    v = -dx * np.sin(th) + dy * np.cos(th)
    return (u / rx) ** 2 + (v / ry) ** 2 <= 1.0


def _polygon(yy, xx, rng, size):
    """Star-shaped polygon: a pixel is inside when it is on the inner side of its sector's edge."""
    n = rng.integers(3, 8)
    cy, cx = rng.uniform(0.25, 0.75, 2) * size
    ang = np.sort(rng.uniform(0, 2 * np.pi, n))
    rad = rng.uniform(0.1, 0.28, n) * size
    vy, vx = cy + rad * np.sin(ang), cx + rad * np.cos(ang)
    theta = np.mod(np.arctan2(yy - cy, xx - cx), 2 * np.pi)
    k = np.searchsorted(ang, theta) - 1  # sector i spans ang[i]..ang[i+1]; -1 wraps
    a, b = k % n, (k + 1) % n
    ey, ex = vy[b] - vy[a], vx[b] - vx[a]
    cross_p = ex * (yy - vy[a]) - ey * (xx - vx[a])
    cross_c = ex * (cy - vy[a]) - ey * (cx - vx[a])
    return cross_p * cross_c >= 0


def _bias_field(rng, size):
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1) - 0.5
    c = rng.normal(size=6)
    f = c[0] * xx + c[1] * yy + c[2] * xx * yy + c[3] * xx**2 + c[4] * yy**2 + c[5] * np.sin(np.pi * (xx + yy))
    span = np.abs(f).max()
    return f / span if span > 0 else f


def render(spec: SyntheticSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """One (gray image [H,W], labels [H,W]) pair."""
    S = spec.size
    yy, xx = np.mgrid[0:S, 0:S].astype(np.float64)
    labels = np.zeros((S, S), dtype=np.int64)
    for c in range(1, spec.num_classes):
        for _ in range(spec.shapes_per_class):
            shape = _ellipse if rng.random() < 0.5 else _polygon
            labels[shape(yy, xx, rng, S)] = c
    img = class_levels(spec.num_classes)[labels]
    if spec.blur_sigma > 0:
        img = gaussian_filter(img, spec.blur_sigma, mode="nearest")
    if spec.speckle > 0:
        img = img * (1.0 + spec.speckle * rng.normal(size=img.shape))
    if spec.bias_field > 0:
        img = img * (1.0 + spec.bias_field * _bias_field(rng, S))
    return np.clip(img, 0.0, 1.0), labels


def generate_synthetic(spec: SyntheticSpec) -> tuple[Dataset, Dataset]:
    """Deterministic (train, val) split under ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    n = spec.n_train + spec.n_val
    pairs = [render(spec, rng) for _ in range(n)]
    gray = np.stack([p[0] for p in pairs])
    images = np.repeat(gray[:, None], 3, axis=1)
    labels = np.stack([p[1] for p in pairs])
    full = Dataset(images, labels, spec.num_classes)
    return full.subset(slice(0, spec.n_train)), full.subset(slice(spec.n_train, n))


# -- folder format: images/<name>.png (8-bit RGB), masks/<name>.pgm, palette.json ---------------


def default_palette(num_classes: int) -> list[int]:
    return [int(round(v)) for v in np.linspace(0, 255, num_classes)]


def save_folder_dataset(ds: Dataset, directory, palette: list[int] | None = None) -> None:
    root = Path(directory)
    palette = palette or default_palette(ds.num_classes)
    if len(palette) != ds.num_classes or len(set(palette)) != len(palette):
        raise ValueError(f"palette needs {ds.num_classes} distinct gray values, got {palette}")
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    lut = np.asarray(palette, dtype=np.uint8)
    for i in range(len(ds)):
        rgb = np.round(np.clip(ds.images[i], 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0)
        Image.fromarray(rgb, "RGB").save(root / "images" / f"{i:05d}.png")
        Image.fromarray(lut[ds.labels[i]], "L").save(root / "masks" / f"{i:05d}.pgm")
    (root / "palette.json").write_text(json.dumps({"values": palette}))


def load_folder_dataset(directory, size: int | None = None) -> Dataset:
    """Pair images/*.png with masks/*.pgm by stem; masks map gray values to classes via palette.json."""
    root = Path(directory)
    imgs = {p.stem: p for p in sorted((root / "images").glob("*.png"))}
    masks = {p.stem: p for p in sorted((root / "masks").glob("*.pgm"))}
    if not imgs and not masks:
        raise ValueError(f"no pairs found in {root}")
    orphans = sorted(set(imgs) ^ set(masks))
    if orphans:
        raise ValueError(f"orphan files without a partner: {orphans[:5]}")
    palette = json.loads((root / "palette.json").read_text())["values"]
    lut = np.full(256, -1, dtype=np.int64)
    lut[np.asarray(palette)] = np.arange(len(palette))
    images, labels = [], []
    for stem in sorted(imgs):
        im = Image.open(imgs[stem]).convert("RGB")
        mk = Image.open(masks[stem])
        if size is not None and im.size != (size, size):
            im = im.resize((size, size), Image.BILINEAR)
            mk = mk.resize((size, size), Image.NEAREST)
        lab = lut[np.asarray(mk)]
        if (lab < 0).any():
            bad = sorted(set(np.asarray(mk)[lab < 0].tolist()))
            raise ValueError(f"mask {masks[stem].name} has colors outside the palette: {bad[:5]}")
        images.append(np.asarray(im, dtype=np.float64).transpose(2, 0, 1) / 255.0)
        labels.append(lab)
    return Dataset(np.stack(images), np.stack(labels), len(palette))


def spec_to_json(spec: SyntheticSpec) -> str:
    return json.dumps(asdict(spec), indent=2)
