"""First-layer filter grids."""
from __future__ import annotations

import math

import numpy as np

from .network import Checkpoint


class RenderError(ValueError):
    pass


def normalize_filter(f: np.ndarray) -> np.ndarray:
    """Min-max scale one filter to 0..255; a constant filter becomes mid-gray."""
    lo, hi = float(f.min()), float(f.max())
    if hi == lo:
        return np.full(f.shape, 128, dtype=np.uint8)
    return np.rint((f - lo) / (hi - lo) * 255).astype(np.uint8)


def filter_grid(weights: np.ndarray) -> np.ndarray:
    """Tile ``[K, 3, k, k]`` filters into a near-square RGB grid with 1-pixel black lines."""
    if weights.ndim != 4 or weights.shape[1] != 3:
        raise RenderError(f"need [K, 3, kh, kw] filters, got {weights.shape}")
    K, _, kh, kw = weights.shape
    cols = math.ceil(math.sqrt(K))
    rows = math.ceil(K / cols)
    grid = np.zeros((rows * kh + rows + 1, cols * kw + cols + 1, 3), dtype=np.uint8)
    for i in range(K):
        r, c = divmod(i, cols)
        y, x = 1 + r * (kh + 1), 1 + c * (kw + 1)
        grid[y:y + kh, x:x + kw] = normalize_filter(weights[i]).transpose(1, 2, 0)
    return grid


def render_filter_grid(ckpt: Checkpoint, layer_name: str) -> np.ndarray:
    layer = ckpt.spec.layer(layer_name)
    if layer.kind != "conv":
        raise RenderError(f"layer {layer_name!r} is a {layer.kind} layer, not conv")
    w = ckpt.blobs[f"{layer_name}.weights"]
    if w.shape[1] != 3:
        raise RenderError(f"layer {layer_name!r} has {w.shape[1]} input channels, need 3")
    return filter_grid(w)
