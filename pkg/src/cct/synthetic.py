"""A small separable image task for smoke-testing the full pipeline.

Positive images carry horizontal stripes and negative images vertical
ones, each with a random phase, contrast and pixel noise. A single conv
stage can already tell the orientation apart, so a working model reaches
perfect training accuracy quickly.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .datasplit import write_manifest

PERIOD = 8
THICKNESS = 3


def make_images(n: int, seed: int, size: int = 32, noise: float = 0.15):
    """``(images (n, 1, size, size) in [0, 1], labels)`` with balanced classes."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    rng.shuffle(labels)
    coords = np.arange(size)
    images = np.empty((n, 1, size, size))
    for i, y in enumerate(labels):
        phase = rng.integers(0, PERIOD)
        lo, hi = np.sort(rng.uniform(0.1, 0.9, 2))
        hi = max(hi, lo + 0.3)
        stripe = ((coords + phase) % PERIOD < THICKNESS).astype(float)
        grid = np.repeat(stripe[:, None], size, axis=1) if y == 1 else \
            np.repeat(stripe[None, :], size, axis=0)
        img = lo + (hi - lo) * grid + rng.normal(0.0, noise, (size, size))
        images[i, 0] = np.clip(img, 0.0, 1.0)
    return images, labels


def write_task(out_dir, seed: int = 0, n_train: int = 64, n_test: int = 32, size: int = 32) -> dict:
    """Write PNGs plus ``train.csv`` and ``test.csv`` manifests; return their paths."""
    from PIL import Image

    out = Path(out_dir)
    paths = {}
    for split, n, split_seed in (("train", n_train, seed), ("test", n_test, seed + 1_000_003)):
        images, labels = make_images(n, split_seed, size)
        (out / split).mkdir(parents=True, exist_ok=True)
        rows = []
        for i, (img, y) in enumerate(zip(images, labels)):
            rel = f"{split}/{split}_{i:03d}.png"
            pixels = np.round(img[0] * 255).astype(np.uint8)
            Image.fromarray(pixels, mode="L").save(out / rel)
            rows.append((rel, "positive" if y == 1 else "negative"))
        manifest = out / f"{split}.csv"
        write_manifest(manifest, rows)
        paths[split] = manifest
    return paths
