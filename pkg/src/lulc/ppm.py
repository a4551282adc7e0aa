"""Binary PPM (P6, maxval 255) reader and writer.

Images are ``uint8`` arrays of shape ``(height, width, 3)``.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .container import atomic_write_bytes


class PPMError(ValueError):
    pass


def _tokens(data: bytes, count: int):
    """Read ``count`` header tokens, skipping whitespace and ``#`` comments."""
    out, pos = [], 0
    while len(out) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise PPMError("truncated PPM header")
        out.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return out, pos + 1


def decode_ppm(data: bytes) -> np.ndarray:
    (magic, w, h, maxval), pos = _tokens(data, 4)
    if magic != b"P6":
        raise PPMError(f"not a binary PPM (magic {magic!r})")
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError:
        raise PPMError("non-numeric PPM header field") from None
    if w < 1 or h < 1:
        raise PPMError(f"invalid PPM size {w}x{h}")
    if maxval != 255:
        raise PPMError(f"only maxval 255 is supported, got {maxval}")
    need = w * h * 3
    raster = data[pos:pos + need]
    if len(raster) != need:
        raise PPMError(f"PPM raster truncated: {len(raster)} of {need} bytes")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w, 3).copy()


def encode_ppm(img: np.ndarray) -> bytes:
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
        raise PPMError(f"expected a uint8 (H, W, 3) array, got {img.dtype} {img.shape}")
    h, w, _ = img.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(img).tobytes()


def read_ppm(path) -> np.ndarray:
    return decode_ppm(Path(path).read_bytes())


def write_ppm(path, img: np.ndarray) -> None:
    atomic_write_bytes(path, encode_ppm(img))
