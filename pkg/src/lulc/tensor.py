"""Dense NCHW arrays and the bulk kernels the layers are built on.

Tensors are plain ``numpy.ndarray`` objects in C (row-major) order. float32 is
the training dtype; float64 is used by the gradient-check oracles.
"""
from __future__ import annotations

import numpy as np

TRAIN_DTYPE = np.float32
CHECK_DTYPE = np.float64


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class GeometryError(ValueError):
    """A window/stride/padding configuration does not tile the input."""


def as_pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        a, b = v
        return int(a), int(b)
    return int(v), int(v)


def flat_index(shape, n: int, c: int, h: int, w: int) -> int:
    _, C, H, W = shape
    return ((n * C + c) * H + h) * W + w


def check_tensor(x: np.ndarray) -> None:
    if x.ndim == 0 or x.ndim > 4:
        raise ShapeError(f"tensor rank must be 1..4, got shape {x.shape}")
    if any(d < 1 for d in x.shape):
        raise ShapeError(f"tensor extents must be >= 1, got shape {x.shape}")
    if x.dtype not in (np.float32, np.float64):
        raise TypeError(f"tensor dtype must be float32 or float64, got {x.dtype}")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    if a.dtype != b.dtype:
        raise TypeError(f"dtype mismatch: {a.dtype} vs {b.dtype}")
    return a @ b


def output_size(size: int, kernel: int, stride: int, pad: int) -> int:
    """Sliding-window output extent; rejects strides that do not tile exactly."""
    span = size + 2 * pad - kernel
    if span < 0 or stride < 1:
        raise GeometryError(
            f"window {kernel} (stride {stride}, pad {pad}) does not fit extent {size}: "
            f"computed output {span // max(stride, 1) + 1}"
        )
    if span % stride:
        raise GeometryError(
            f"stride {stride} does not evenly tile extent {size} with window {kernel}, "
            f"pad {pad}: computed output {span / stride + 1:.3f}"
        )
    return span // stride + 1


def conv_geometry(input_shape, kernel, stride, pad) -> tuple[int, int]:
    _, _, H, W = input_shape
    kh, kw = as_pair(kernel)
    sh, sw = as_pair(stride)
    ph, pw = as_pair(pad)
    try:
        ho = output_size(H, kh, sh, ph)
        wo = output_size(W, kw, sw, pw)
    except GeometryError as err:
        raise GeometryError(f"input {tuple(input_shape)}: {err}") from None
    return ho, wo


def im2col(x: np.ndarray, kernel, stride=1, pad=0, fill: float = 0.0) -> np.ndarray:
    """Unfold receptive fields into columns.

    Returns a ``[C*kh*kw, N*Ho*Wo]`` array. Rows run over (c, i, j) in
    row-major order so they line up with a ``[K, C, kh, kw]`` weight reshape;
    columns run over (n, ho, wo).
    """
    N, C, H, W = x.shape
    kh, kw = as_pair(kernel)
    sh, sw = as_pair(stride)
    ph, pw = as_pair(pad)
    ho, wo = conv_geometry(x.shape, (kh, kw), (sh, sw), (ph, pw))
    if ph or pw:
        xp = np.full((N, C, H + 2 * ph, W + 2 * pw), fill, dtype=x.dtype)
        xp[:, :, ph:ph + H, pw:pw + W] = x
    else:
        xp = x
    cols = np.empty((C, kh, kw, N, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw]
            cols[:, i, j] = patch.transpose(1, 0, 2, 3)
    return cols.reshape(C * kh * kw, N * ho * wo)


def col2im(cols: np.ndarray, input_shape, kernel, stride=1, pad=0) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add columns back onto the image."""
    N, C, H, W = input_shape
    kh, kw = as_pair(kernel)
    sh, sw = as_pair(stride)
    ph, pw = as_pair(pad)
    ho, wo = conv_geometry(input_shape, (kh, kw), (sh, sw), (ph, pw))
    expected = (C * kh * kw, N * ho * wo)
    if cols.shape != expected:
        raise ShapeError(f"columns have shape {cols.shape}, expected {expected}")
    c6 = cols.reshape(C, kh, kw, N, ho, wo)
    xp = np.zeros((N, C, H + 2 * ph, W + 2 * pw), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw] += c6[:, i, j].transpose(1, 0, 2, 3)
    return xp[:, :, ph:ph + H, pw:pw + W]
