"""Synthetic two-category corpus: oriented stripes and blob textures pasted
as elliptical objects onto cluttered, noisy rectangle backgrounds.

    python -m tdsaliency.synth OUT_DIR [--seed N]

writes 8-bit PGM images and masks plus ``train.csv`` / ``test.csv``
manifests.
"""

import argparse
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .pnm import write_pgm

CATEGORIES = ("stripes", "blobs")
SIZE = 256


class SynthImage(NamedTuple):
    name: str
    image: np.ndarray      # uint8
    mask: np.ndarray       # bool, all False for background images
    labels: tuple          # category indices


def clutter(rng, size=SIZE, n_rects=220):
    """Axis-aligned rectangle patchwork with mild pixel noise."""
    img = np.full((size, size), rng.uniform(60, 190))
    for _ in range(n_rects):
        h, w = rng.integers(6, 40, size=2)
        y, x = rng.integers(-h + 1, size, size=2)
        img[max(y, 0):y + h, max(x, 0):x + w] = rng.uniform(30, 220)
    return img + rng.normal(0, 3, img.shape)


def stripes(rng, size=SIZE):
    theta = np.deg2rad(rng.uniform(35, 55))
    period = rng.uniform(9, 14)
    yy, xx = np.mgrid[:size, :size]
    phase = (xx * np.cos(theta) + yy * np.sin(theta)) * 2 * np.pi / period
    return 128 + 70 * np.sin(phase + rng.uniform(0, 2 * np.pi)) + rng.normal(0, 3, (size, size))


def blobs(rng, size=SIZE):
    spacing = rng.uniform(12, 16)
    sigma = rng.uniform(2.5, 3.5)
    yy, xx = np.mgrid[:size, :size]
    img = np.zeros((size, size))
    centres = np.arange(-spacing, size + spacing, spacing)
    for cy in centres:
        for cx in centres:
            y = cy + rng.uniform(-3, 3)
            x = cx + rng.uniform(-3, 3)
            y0, y1 = int(max(y - 4 * sigma, 0)), int(min(y + 4 * sigma + 1, size))
            x0, x1 = int(max(x - 4 * sigma, 0)), int(min(x + 4 * sigma + 1, size))
            if y0 >= y1 or x0 >= x1:
                continue
            d2 = (yy[y0:y1, x0:x1] - y) ** 2 + (xx[y0:y1, x0:x1] - x) ** 2
            img[y0:y1, x0:x1] += rng.uniform(0.6, 1.0) * np.exp(-d2 / (2 * sigma ** 2))
    return 60 + 140 * np.clip(img, 0, 1) + rng.normal(0, 3, (size, size))


def ellipse_mask(rng, size=SIZE):
    k = size / SIZE
    ay, ax = rng.uniform(55 * k, 85 * k, size=2)
    cy = rng.uniform(ay * 0.8, size - ay * 0.8)
    cx = rng.uniform(ax * 0.8, size - ax * 0.8)
    yy, xx = np.mgrid[:size, :size]
    return ((yy - cy) / ay) ** 2 + ((xx - cx) / ax) ** 2 <= 1.0


TEXTURES = (stripes, blobs)


def make_image(rng, category=None, name="", size=SIZE):
    img = clutter(rng, size)
    mask = np.zeros((size, size), dtype=bool)
    labels = ()
    if category is not None:
        mask = ellipse_mask(rng, size)
        img[mask] = TEXTURES[category](rng, size)[mask]
        labels = (category,)
    return SynthImage(name, np.clip(np.rint(img), 0, 255).astype(np.uint8), mask, labels)


def make_corpus(seed=0, n_train=40, n_test=20, n_background=20, size=SIZE):
    """(train, test) lists; background images are split evenly."""
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c, name in enumerate(CATEGORIES):
        for i in range(n_train):
            train.append(make_image(rng, c, f"{name}_train_{i:03d}", size))
        for i in range(n_test):
            test.append(make_image(rng, c, f"{name}_test_{i:03d}", size))
    half = n_background // 2
    for i in range(n_background):
        split, k = (train, i) if i < half else (test, i - half)
        split.append(make_image(rng, None, f"background_{'train' if i < half else 'test'}_{k:03d}", size))
    return train, test


def write_corpus(out_dir, seed=0, **kw):
    """Write images, masks and manifests; returns the two manifest paths."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(exist_ok=True)
    paths = []
    for split_name, items in zip(("train", "test"), make_corpus(seed, **kw)):
        lines = [f"# categories = {';'.join(CATEGORIES)}", "image,mask,labels"]
        for it in items:
            write_pgm(out / "images" / f"{it.name}.pgm", it.image)
            mask_ref = "-"
            if it.labels:
                write_pgm(out / "masks" / f"{it.name}.pgm", it.mask.astype(np.uint8) * 255)
                mask_ref = f"masks/{it.name}.pgm"
            labels = ";".join(CATEGORIES[c] for c in it.labels)
            lines.append(f"images/{it.name}.pgm,{mask_ref},{labels}")
        path = out / f"{split_name}.csv"
        path.write_text("\n".join(lines) + "\n")
        paths.append(path)
    return tuple(paths)


def main(argv=None):
    ap = argparse.ArgumentParser(prog="python -m tdsaliency.synth")
    ap.add_argument("out_dir")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    for p in write_corpus(args.out_dir, args.seed):
        print(p)


if __name__ == "__main__":
    main()
