"""Rotation-with-inscribed-crop and nearest-neighbour upsampling for scene images.

Images are ``uint8`` arrays of shape ``(height, width, 3)``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .container import atomic_write_text
from .ppm import read_ppm, write_ppm

DEFAULT_MAGNITUDES = (5, 10, 30, 40)


class GeometryError(ValueError):
    pass


def inscribed_side(width: int, angle_degrees: float) -> int:
    """Side of the largest centred axis-aligned square inside a rotated ``width`` square."""
    t = math.radians(angle_degrees)
    return int(math.floor(width / (abs(math.sin(t)) + abs(math.cos(t))) + 1e-9))


def rotate_crop_coords(width: int, angle_degrees: float):
    """Source sampling coordinates ``(xs, ys)`` for every output pixel.

    Output pixel centres are spread over the inscribed square, which is then
    rotated about the image centre. Positive angles turn the content
    counter-clockwise as displayed.
    """
    s = inscribed_side(width, angle_degrees)
    t = math.radians(angle_degrees)
    c, sn = math.cos(t), math.sin(t)
    offsets = s * ((np.arange(width) + 0.5) / width - 0.5)
    u, v = np.meshgrid(offsets, offsets)  # u along columns, v along rows
    centre = (width - 1) / 2.0
    xs = centre + c * u - sn * v
    ys = centre + sn * u + c * v
    # the inscribed bound keeps samples inside [0, W-1]; clip only rounding noise
    return np.clip(xs, 0, width - 1), np.clip(ys, 0, width - 1)


def bilinear_sample(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, max(h - 2, 0))
    x1, y1 = np.minimum(x0 + 1, w - 1), np.minimum(y0 + 1, h - 1)
    fx, fy = (xs - x0)[..., None], (ys - y0)[..., None]
    src = img.astype(np.float64)
    top = src[y0, x0] * (1 - fx) + src[y0, x1] * fx
    bottom = src[y1, x0] * (1 - fx) + src[y1, x1] * fx
    out = top * (1 - fy) + bottom * fy
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def rotate_crop(img: np.ndarray, angle_degrees: float) -> np.ndarray:
    """Rotate about the centre, keep the inscribed square, rescale to the input size."""
    h, w = img.shape[:2]
    if h != w:
        raise GeometryError(f"rotate_crop needs a square image, got {w}x{h}")
    if not abs(angle_degrees) < 90:
        raise GeometryError(f"rotation angle must satisfy |angle| < 90, got {angle_degrees}")
    if angle_degrees == 0:
        return img.copy()
    xs, ys = rotate_crop_coords(w, angle_degrees)
    return bilinear_sample(img, xs, ys)


def upsample_nn(img: np.ndarray, factor: int) -> np.ndarray:
    if factor < 1:
        raise ValueError(f"upsampling factor must be >= 1, got {factor}")
    return np.repeat(np.repeat(img, factor, axis=0), factor, axis=1)


@dataclass
class AugmentPlan:
    angles: list[float]
    include_original: bool = True
    output_size: int | None = None  # None keeps the source size

    def __post_init__(self):
        if not self.angles:
            raise ValueError("augmentation needs at least one angle")
        if any(not abs(a) < 90 for a in self.angles):
            raise ValueError(f"angles must satisfy |angle| < 90, got {self.angles}")
        tags = [angle_tag(a) for a in self.angles] + (["+00"] if self.include_original else [])
        if len(set(tags)) != len(tags):
            raise ValueError(f"angles produce duplicate outputs: {self.angles}")

    @classmethod
    def symmetric(cls, magnitudes=DEFAULT_MAGNITUDES, **kw) -> "AugmentPlan":
        angles = []
        for m in magnitudes:
            angles += [m, -m]
        return cls(angles, **kw)

    @property
    def multiplier(self) -> int:
        return int(self.include_original) + len(self.angles)


def angle_tag(angle: float) -> str:
    if float(angle).is_integer():
        return f"{int(angle):+03d}"
    return f"{angle:+.2f}".replace(".", "p")


@dataclass
class AugmentManifest:
    rows: list = field(default_factory=list)    # (output_path, source_path, angle)
    errors: list = field(default_factory=list)  # (source_path, message)

    def __len__(self):
        return len(self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["output_path", "source_path", "angle_degrees", "error"])
        for out, src, angle in self.rows:
            w.writerow([out, src, angle, ""])
        for src, msg in self.errors:
            w.writerow(["", src, "", msg])
        return buf.getvalue()


def _fit_size(img: np.ndarray, size: int | None) -> np.ndarray:
    if size is None or img.shape[0] == size:
        return img
    if size % img.shape[0] or img.shape[0] != img.shape[1]:
        raise GeometryError(f"cannot upsample {img.shape[1]}x{img.shape[0]} to {size} by an integer factor")
    return upsample_nn(img, size // img.shape[0])


def augment_dataset(samples, plan: AugmentPlan, out_dir, write=write_ppm) -> AugmentManifest:
    """Write the original plus one rotation per angle for every source image.

    ``samples`` is an iterable of ``(path, class_name)``. Outputs land in
    ``out_dir/<class_name>/<stem>_r<angle>.ppm``. Unreadable sources are
    recorded in ``manifest.errors`` and skipped.
    """
    out_dir = Path(out_dir)
    manifest = AugmentManifest()
    angles = ([0] if plan.include_original else []) + list(plan.angles)
    for src, cls in sorted(samples):
        try:
            img = _fit_size(read_ppm(src), plan.output_size)
            outputs = [(a, rotate_crop(img, a)) for a in angles]
        except (OSError, ValueError) as err:
            manifest.errors.append((str(src), f"{type(err).__name__}: {err}"))
            continue
        stem = Path(src).stem
        for a, out in outputs:
            dest = out_dir / cls / f"{stem}_r{angle_tag(a)}.ppm"
            write(dest, out)
            manifest.rows.append((str(dest), str(src), a))
    manifest.rows.sort()
    return manifest


def write_manifest(manifest: AugmentManifest, path) -> None:
    atomic_write_text(path, manifest.to_csv())
