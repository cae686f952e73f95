"""Dataset loading, geometric augmentation, and a synthetic segmentation
dataset generator for self-contained runs.

On-disk layout: ``<root>/<split>/images/*.png`` paired with
``<root>/<split>/masks/*.png`` by filename stem; masks are 8-bit single
channel with class ids as pixel values; ``classes.json`` at the root lists
ordered class names and display colors.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError


@dataclass
class SegSample:
    image: np.ndarray  # [3, h, w] float32 in [0, 1]
    mask: np.ndarray   # [h, w] int32 class indices
    stem: str = ""


@dataclass
class SegBatch:
    images: np.ndarray  # [n, 3, h, w] float32
    masks: np.ndarray   # [n, h, w] int32
    indices: tuple


@dataclass
class AugmentConfig:
    rotation_deg: float = 15.0
    shift_frac: float = 0.1
    flip_prob: float = 0.5

    def __post_init__(self):
        if self.rotation_deg < 0 or self.shift_frac < 0:
            raise ValueError("augmentation ranges must be non-negative")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError("flip probability must be in [0, 1]")


@dataclass
class SegDataset:
    samples: list
    class_names: list
    colors: list

    @property
    def num_classes(self):
        return len(self.class_names)

    def __len__(self):
        return len(self.samples)


def default_palette(num_classes):
    base = [
        (0, 0, 0), (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200),
        (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230),
        (210, 245, 60), (250, 190, 190), (0, 128, 128),
    ]
    while len(base) < num_classes:
        base.append(tuple(int(v) for v in np.random.default_rng(len(base)).integers(0, 256, 3)))
    return [list(c) for c in base[:num_classes]]


def write_classes_json(root, class_names, colors=None):
    colors = colors or default_palette(len(class_names))
    payload = {"classes": [{"name": n, "color": list(c)}
                           for n, c in zip(class_names, colors)]}
    Path(root, "classes.json").write_text(json.dumps(payload, indent=2))


def read_classes_json(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing classes file: {path}")
    payload = json.loads(path.read_text())
    classes = payload.get("classes")
    if not classes:
        raise DataError(f"{path}: no classes defined")
    return [c["name"] for c in classes], [c.get("color", [0, 0, 0]) for c in classes]


def load_dataset(root, split) -> SegDataset:
    """Load paired image/mask PNGs in stable lexicographic order."""
    root = Path(root)
    class_names, colors = read_classes_json(root / "classes.json")
    num_classes = len(class_names)
    img_dir = root / split / "images"
    mask_dir = root / split / "masks"
    if not img_dir.is_dir() or not mask_dir.is_dir():
        raise DataError(f"split layout missing: {img_dir} / {mask_dir}")
    images = {p.stem: p for p in img_dir.glob("*.png")}
    masks = {p.stem: p for p in mask_dir.glob("*.png")}
    if not images:
        raise DataError(f"empty split: no images under {img_dir}")
    for stem in sorted(set(images) | set(masks)):
        if stem not in masks:
            raise DataError(f"unpaired image (no mask): {images[stem]}")
        if stem not in images:
            raise DataError(f"unpaired mask (no image): {masks[stem]}")
    samples = []
    for stem in sorted(images):
        img = Image.open(images[stem]).convert("RGB")
        mk = Image.open(masks[stem])
        if mk.mode not in ("L", "P"):
            raise DataError(f"{masks[stem]}: mask mode {mk.mode}, expected 8-bit indices")
        mask = np.asarray(mk, dtype=np.int32)
        arr = np.asarray(img, dtype=np.float32).transpose(2, 0, 1) / 255.0
        if mask.shape != arr.shape[1:]:
            raise DataError(
                f"{masks[stem]}: mask size {mask.shape} != image size {arr.shape[1:]}"
            )
        if mask.max(initial=0) >= num_classes:
            raise DataError(
                f"{masks[stem]}: class id {int(mask.max())} >= num_classes {num_classes}"
            )
        samples.append(SegSample(image=arr, mask=mask, stem=stem))
    return SegDataset(samples=samples, class_names=class_names, colors=colors)


def save_dataset(samples, root, split, class_names, colors=None):
    """Write samples in the canonical layout (test fixtures, synth export)."""
    root = Path(root)
    (root / split / "images").mkdir(parents=True, exist_ok=True)
    (root / split / "masks").mkdir(parents=True, exist_ok=True)
    write_classes_json(root, class_names, colors)
    for i, s in enumerate(samples):
        stem = s.stem or f"sample_{i:05d}"
        rgb = np.clip(s.image * 255.0 + 0.5, 0, 255).astype(np.uint8).transpose(1, 2, 0)
        Image.fromarray(rgb).save(root / split / "images" / f"{stem}.png")
        Image.fromarray(s.mask.astype(np.uint8), mode="L").save(
            root / split / "masks" / f"{stem}.png")


def _warp(arr, angle_deg, dy, dx, nearest):
    """Inverse-mapped affine (rotation about center, then shift); zero fill."""
    h, w = arr.shape[-2:]
    th = math.radians(angle_deg)
    cos_t, sin_t = math.cos(th), math.sin(th)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rr, cc = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    r0 = rr - cy - dy
    c0 = cc - cx - dx
    src_r = cos_t * r0 + sin_t * c0 + cy
    src_c = -sin_t * r0 + cos_t * c0 + cx
    if nearest:
        ri = np.rint(src_r).astype(np.int64)
        ci = np.rint(src_c).astype(np.int64)
        inside = (ri >= 0) & (ri < h) & (ci >= 0) & (ci < w)
        out = np.zeros_like(arr)
        out[..., inside] = arr[..., ri[inside], ci[inside]]
        return out
    r0f = np.floor(src_r).astype(np.int64)
    c0f = np.floor(src_c).astype(np.int64)
    tr = (src_r - r0f).astype(arr.dtype)
    tc = (src_c - c0f).astype(arr.dtype)
    out = np.zeros_like(arr)
    for drr, dcc, wgt in ((0, 0, (1 - tr) * (1 - tc)), (0, 1, (1 - tr) * tc),
                          (1, 0, tr * (1 - tc)), (1, 1, tr * tc)):
        ri = r0f + drr
        ci = c0f + dcc
        inside = (ri >= 0) & (ri < h) & (ci >= 0) & (ci < w)
        vals = np.zeros(arr.shape[:-2] + inside.shape, dtype=arr.dtype)
        vals[..., inside] = arr[..., ri[inside], ci[inside]]
        out += vals * wgt
    return out


def augment(sample: SegSample, cfg: AugmentConfig, rng) -> SegSample:
    """Identical geometric transform on image (bilinear) and mask (nearest);
    out-of-bounds regions become background / black."""
    h, w = sample.mask.shape
    angle = float(rng.uniform(-cfg.rotation_deg, cfg.rotation_deg))
    dy = float(rng.uniform(-cfg.shift_frac, cfg.shift_frac) * h)
    dx = float(rng.uniform(-cfg.shift_frac, cfg.shift_frac) * w)
    flip = bool(rng.random() < cfg.flip_prob)
    img, mask = sample.image, sample.mask
    if flip:
        img = img[:, :, ::-1]
        mask = mask[:, ::-1]
    if angle != 0.0 or dy != 0.0 or dx != 0.0:
        img = np.clip(_warp(img, angle, dy, dx, nearest=False), 0.0, 1.0)
        mask = _warp(mask, angle, dy, dx, nearest=True)
    return SegSample(image=np.ascontiguousarray(img, dtype=np.float32),
                     mask=np.ascontiguousarray(mask), stem=sample.stem)


def _draw_region(xx, yy, rng, cls, size):
    cy = rng.uniform(0.25, 0.75) * size
    cx = rng.uniform(0.25, 0.75) * size
    theta = rng.uniform(0.0, math.pi)
    u = (xx - cx) * math.cos(theta) + (yy - cy) * math.sin(theta)
    v = -(xx - cx) * math.sin(theta) + (yy - cy) * math.cos(theta)
    length = rng.uniform(0.4, 0.65) * size
    # thick enough to survive the network's 1/4-resolution output stride
    thick = rng.uniform(0.05, 0.09) * size
    kind = cls % 3
    if kind == 0:   # elongated bar (shaft-like)
        return (np.abs(u) < length / 2) & (np.abs(v) < thick)
    if kind == 1:   # thin ellipse
        return (u / (length / 2)) ** 2 + (v / thick) ** 2 < 1.0
    # wedge tapering to a tip
    half_w = thick * (u + length / 2) / length + 0.5
    return (np.abs(u) < length / 2) & (np.abs(v) < half_w)


def synth_shapes(n, size, num_classes, seed=0):
    """Instrument-like elongated shapes on textured backgrounds, with a
    small foreground fraction to mimic class imbalance. Deterministic in
    (seed, sample index)."""
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    samples = []
    fg_classes = num_classes - 1
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        base = rng.uniform(0.15, 0.5, 3)
        block = max(size // 8, 1)
        tex = rng.normal(0.0, 1.0, (3, size // block + 1, size // block + 1))
        tex = np.repeat(np.repeat(tex, block, 1), block, 2)[:, :size, :size] * 0.04
        img = base[:, None, None] + tex
        mask = np.zeros((size, size), dtype=np.int32)
        n_shapes = 1 + int(rng.random() < 0.4)
        for j in range(n_shapes):
            cls = (i % fg_classes) + 1 if j == 0 else int(rng.integers(1, num_classes))
            region = _draw_region(xx, yy, rng, cls, size)
            tone = 0.55 + 0.35 * (cls / max(fg_classes, 1))
            color = np.clip(np.array([tone, tone * 0.95, tone * 0.9])
                            + rng.normal(0, 0.03, 3), 0.05, 0.95)
            img[:, region] = color[:, None]
            mask[region] = cls
            if rng.random() < 0.7:  # specular highlight
                hy = rng.uniform(0.3, 0.7) * size
                hx = rng.uniform(0.3, 0.7) * size
                hl = ((yy - hy) ** 2 + (xx - hx) ** 2) < (0.03 * size) ** 2
                img[:, hl & region] = 0.98
        if rng.random() < 0.5:  # shadow over a half-plane
            sh_theta = rng.uniform(0, 2 * math.pi)
            half = ((xx - size / 2) * math.cos(sh_theta)
                    + (yy - size / 2) * math.sin(sh_theta)) > rng.uniform(0, 0.2) * size
            img[:, half] *= 0.6
        samples.append(SegSample(image=np.clip(img, 0, 1).astype(np.float32),
                                 mask=mask, stem=f"synth_{i:05d}"))
    return samples


def batch_iter(samples, batch_size, seed=0, shuffle=True, epoch=0):
    """Partition all samples into batches (final short batch kept);
    deterministic shuffle in (seed, epoch)."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(len(samples))
    if shuffle:
        order = np.random.default_rng([seed, epoch]).permutation(order)
    for start in range(0, len(samples), batch_size):
        idx = order[start: start + batch_size]
        images = np.stack([samples[i].image for i in idx])
        masks = np.stack([samples[i].mask for i in idx])
        yield SegBatch(images=images, masks=masks, indices=tuple(int(i) for i in idx))
