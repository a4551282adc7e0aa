"""Synthetic texture scenes standing in for aerial imagery in tests and scripts."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .ppm import write_ppm

# (orientation in degrees, spatial frequency in cycles per image width)
DOMAIN_A = [(0, 3), (45, 3), (90, 3), (135, 3), (0, 1.5)]
DOMAIN_B = [(22.5, 3), (67.5, 3), (112.5, 3)]


def grating(rng: np.random.Generator, size: int, orientation: float, frequency: float,
            noise: float = 0.35) -> np.ndarray:
    """A noisy sinusoidal grating with random phase and tint, as uint8 ``(size, size, 3)``."""
    t = np.deg2rad(orientation + rng.normal(0, 4))
    yy, xx = np.mgrid[0:size, 0:size] / size
    phase = rng.uniform(0, 2 * np.pi)
    wave = np.sin(2 * np.pi * frequency * (xx * np.cos(t) + yy * np.sin(t)) + phase)
    tint = rng.uniform(0.6, 1.0, size=3)
    img = 0.5 + 0.3 * wave[..., None] * tint + rng.normal(0, noise * 0.3, size=(size, size, 3))
    return np.clip(np.rint(img * 255), 0, 255).astype(np.uint8)


def texture_set(classes, per_class: int, size: int, seed: int, noise: float = 0.35):
    """Images ``[N, size, size, 3]`` and labels for the given class definitions."""
    rng = np.random.default_rng(seed)
    imgs, labels = [], []
    for k, (orientation, freq) in enumerate(classes):
        for _ in range(per_class):
            imgs.append(grating(rng, size, orientation, freq, noise))
            labels.append(k)
    return np.stack(imgs), np.array(labels, dtype=np.int64)


def write_class_tree(root, num_classes: int, per_class: int, size: int = 8, seed: int = 0,
                     prefix: str = "class") -> Path:
    """Write ``root/<prefix>NN/img_MMM.ppm`` random-texture images."""
    root = Path(root)
    rng = np.random.default_rng(seed)
    for k in range(num_classes):
        d = root / f"{prefix}{k:02d}"
        d.mkdir(parents=True, exist_ok=True)
        orientation, freq = (180.0 * k / num_classes, 1.5 + (k % 3))
        for i in range(per_class):
            write_ppm(d / f"img_{i:03d}.ppm", grating(rng, size, orientation, freq))
    return root
