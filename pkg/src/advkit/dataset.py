"""Bundled synthetic 3-class dataset: circles, triangles, crosses.

32x32 images of one bright shape on a dim textured background. The class
signal is deliberately layered so the corruption families of the suite
each remove a different layer, the way real classifiers lose different
cues under different corruptions:

* shape outline (circle / triangle / cross), drawn near-upright with a
  small tilt, so large rotations hurt;
* a fine multiplicative grain on the shape's dominant color channel that
  identifies the class (circles smooth, triangles 1-px speckle, crosses
  4-px blocks) - any blur or heavy noise destroys it, and zeroing color
  channels usually hides it;
* a random dominant hue per sample, so color itself carries no label
  information and the model cannot fall back on a palette shortcut.

Generation is fully seeded and platform-independent.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from advkit.image import Image, load_image, save_image
from advkit.rng import SplitMix64, derive_seed

LABEL_NAMES = ("circle", "triangle", "cross")
IMAGE_SIZE = 32
_SUPER = 3  # mask supersampling factor for soft edges


@dataclass
class Dataset:
    items: list
    split: str
    label_names: tuple = LABEL_NAMES

    def __len__(self) -> int:
        return len(self.items)

    @property
    def k(self) -> int:
        return len(self.label_names)


def generate_dataset(seed: int = 0, n_train: int = 600, n_test: int = 300):
    """Build the bundled corpus: (train, test) with balanced labels."""
    train = Dataset(
        items=[_make_sample(derive_seed(seed, "train", i), i % 3) for i in range(n_train)],
        split="train",
    )
    test = Dataset(
        items=[_make_sample(derive_seed(seed, "test", i), i % 3) for i in range(n_test)],
        split="test",
    )
    return train, test


def save_dataset(ds: Dataset, directory) -> None:
    os.makedirs(directory, exist_ok=True)
    entries = []
    for i, (img, label) in enumerate(ds.items):
        name = f"img_{i:05d}.ppm"
        save_image(img, os.path.join(directory, name), format="ppm")
        entries.append({"file": name, "label": int(label)})
    meta = {"split": ds.split, "label_names": list(ds.label_names), "files": entries}
    with open(os.path.join(directory, "labels.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(directory) -> Dataset:
    with open(os.path.join(directory, "labels.json")) as fh:
        meta = json.load(fh)
    items = [
        (load_image(os.path.join(directory, entry["file"])), int(entry["label"]))
        for entry in meta["files"]
    ]
    return Dataset(items=items, split=meta["split"], label_names=tuple(meta["label_names"]))


# ------------------------------------------------------------- generation


def _make_sample(sample_seed: int, label: int):
    rng = SplitMix64(sample_seed)
    size = IMAGE_SIZE
    bg = np.zeros((size, size, 3))
    for ch in range(3):
        cell = 6.0 + rng.uniform() * 6.0
        field = _value_field(rng, size, cell)
        lo = 20.0 + rng.uniform() * 15.0
        hi = 50.0 + rng.uniform() * 15.0
        bg[:, :, ch] = lo + field * (hi - lo)

    # the dominant hue usually follows the class (circles reddish,
    # triangles greenish, crosses blueish) with an off-palette tail;
    # the hot channel carries the grain, and both cold channels stay well
    # above the background band so the blob survives single-channel views
    if rng.uniform() < 0.7:
        hot_channel = label
    else:
        hot_channel = (label + 1 + rng.randint(2)) % 3
    hot = 185.0 + rng.uniform() * 60.0
    mid = 120.0 + rng.uniform() * 30.0
    low = 85.0 + rng.uniform() * 30.0
    fg = np.zeros(3)
    fg[hot_channel] = hot
    others = [c for c in range(3) if c != hot_channel]
    if rng.bit():
        others = [others[1], others[0]]
    fg[others[0]], fg[others[1]] = mid, low

    amp = 0.45 + rng.uniform() * 0.30
    tex = _class_texture(rng, label, size, amp)
    mask = _shape_mask(rng, label, size)
    m = (mask * (0.95 + rng.uniform() * 0.05))[:, :, None]
    fg_img = np.empty((size, size, 3))
    for ch in range(3):
        fg_img[:, :, ch] = fg[ch] * (tex if ch == hot_channel else 1.0)
    img = bg * (1.0 - m) + fg_img * m
    # global per-channel exposure jitter: the corpus spans dim and
    # channel-suppressed variants, so luma contrast is not a constant
    gains = 0.4 + rng.uniforms(3) * 0.65
    img *= gains[None, None, :]
    img += 3.0 * rng.normals(size * size * 3).reshape(size, size, 3)
    return Image(np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8)), label


def _class_texture(rng: SplitMix64, label: int, size: int, amp: float) -> np.ndarray:
    """Class grain: circles smooth, triangles 1-px, crosses 4-px blocks."""
    if label == 0:
        return np.ones((size, size))
    if label == 1:
        return 1.0 + amp * (rng.uniforms(size * size).reshape(size, size) * 2.0 - 1.0)
    nb = size // 4 + 1
    blocks = rng.uniforms(nb * nb).reshape(nb, nb) * 2.0 - 1.0
    return 1.0 + amp * np.repeat(np.repeat(blocks, 4, axis=0), 4, axis=1)[:size, :size]


def _shape_mask(rng: SplitMix64, label: int, size: int) -> np.ndarray:
    n = size * _SUPER
    cx = (size / 2.0 + (rng.uniform() - 0.5) * 7.0) * _SUPER
    cy = (size / 2.0 + (rng.uniform() - 0.5) * 7.0) * _SUPER
    ys, xs = np.mgrid[0:n, 0:n].astype(np.float64) + 0.5
    dx = xs - cx
    dy = ys - cy
    tilt = math.radians((rng.uniform() - 0.5) * 12.0)
    ct, st = math.cos(tilt), math.sin(tilt)
    rx = ct * dx + st * dy
    ry = -st * dx + ct * dy

    if label == 0:
        # compact: smallest footprint of the three classes
        radius = (5.5 + rng.uniform() * 1.5) * _SUPER
        hard = (dx * dx + dy * dy) <= radius * radius
    elif label == 1:
        half_w = (7.0 + rng.uniform() * 2.0) * _SUPER
        height = (14.0 + rng.uniform() * 3.5) * _SUPER
        # upright isoceles triangle: apex up, base down
        top = -height / 2.0
        frac = (ry - top) / height
        hard = (ry >= top) & (ry <= height / 2.0) & (np.abs(rx) <= half_w * frac)
    else:
        # widest footprint; bars wide enough to survive an 11x11 median
        bar = (6.5 + rng.uniform() * 1.0) * _SUPER / 2.0
        arm = (16.0 + rng.uniform() * 5.0) * _SUPER / 2.0
        vert = (np.abs(rx) <= bar) & (np.abs(ry) <= arm)
        horz = (np.abs(ry) <= bar) & (np.abs(rx) <= arm)
        hard = vert | horz

    return hard.astype(np.float64).reshape(size, _SUPER, size, _SUPER).mean(axis=(1, 3))


def _value_field(rng: SplitMix64, size: int, cell: float) -> np.ndarray:
    """Smooth seeded noise field in [0, 1] on a bilinear lattice."""
    gh = int(math.ceil(size / cell)) + 2
    grid = rng.uniforms(gh * gh).reshape(gh, gh)
    coords = np.arange(size, dtype=np.float64) / cell
    idx = np.floor(coords).astype(np.int64)
    t = coords - idx
    t = t * t * (3.0 - 2.0 * t)
    g00 = grid[idx][:, idx]
    g10 = grid[idx + 1][:, idx]
    g01 = grid[idx][:, idx + 1]
    g11 = grid[idx + 1][:, idx + 1]
    top = g00 + (g01 - g00) * t[None, :]
    bot = g10 + (g11 - g10) * t[None, :]
    return top + (bot - top) * t[:, None]
