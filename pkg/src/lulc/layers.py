"""Forward and backward passes for the layer types of the classic scene nets.

Every op is a pure function of its inputs. Backward functions return exact
gradients of the matching forward map, so they can be checked against
central finite differences at float64.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError, as_pair, col2im, conv_geometry, im2col


class LabelError(ValueError):
    pass


@dataclass
class LayerParams:
    """Learnable weights and bias of one layer.

    ``lr_mult`` scales the base learning rate for this layer only; zero
    freezes it. It never affects the forward computation.
    """

    weights: np.ndarray
    bias: np.ndarray
    lr_mult: float = 1.0

    def __post_init__(self):
        if self.lr_mult < 0:
            raise ValueError(f"lr_mult must be >= 0, got {self.lr_mult}")
        if self.bias.ndim != 1 or self.bias.shape[0] != self.weights.shape[0]:
            raise ShapeError(
                f"bias shape {self.bias.shape} does not match weights {self.weights.shape}"
            )


@dataclass(frozen=True)
class LrnParams:
    n: int = 5
    alpha: float = 1e-4
    beta: float = 0.75
    k: float = 1.0

    def __post_init__(self):
        if self.n < 1 or self.n % 2 == 0:
            raise ValueError(f"LRN window must be odd and >= 1, got {self.n}")
        if self.alpha < 0 or self.beta <= 0 or self.k <= 0:
            raise ValueError(f"invalid LRN constants: {self}")


# -- convolution ------------------------------------------------------------

def _check_conv(x, params):
    if x.ndim != 4:
        raise ShapeError(f"conv input must be NCHW, got shape {x.shape}")
    if params.weights.ndim != 4:
        raise ShapeError(f"conv weights must be [K,C,kh,kw], got {params.weights.shape}")
    if params.weights.shape[1] != x.shape[1]:
        raise ShapeError(
            f"conv expects {params.weights.shape[1]} input channels, got {x.shape[1]} "
            f"(input {x.shape}, weights {params.weights.shape})"
        )


def conv_forward(x: np.ndarray, params: LayerParams, stride=1, pad=0) -> np.ndarray:
    """Cross-correlation (no kernel flip) plus per-filter bias."""
    _check_conv(x, params)
    K, C, kh, kw = params.weights.shape
    N = x.shape[0]
    ho, wo = conv_geometry(x.shape, (kh, kw), stride, pad)
    cols = im2col(x, (kh, kw), stride, pad)
    out = params.weights.reshape(K, -1) @ cols + params.bias[:, None]
    return out.reshape(K, N, ho, wo).transpose(1, 0, 2, 3).copy()


def conv_backward(x, params: LayerParams, grad_out, stride=1, pad=0):
    _check_conv(x, params)
    K, C, kh, kw = params.weights.shape
    N = x.shape[0]
    ho, wo = conv_geometry(x.shape, (kh, kw), stride, pad)
    if grad_out.shape != (N, K, ho, wo):
        raise ShapeError(f"grad_out shape {grad_out.shape}, expected {(N, K, ho, wo)}")
    g = grad_out.transpose(1, 0, 2, 3).reshape(K, -1)
    cols = im2col(x, (kh, kw), stride, pad)
    grad_w = (g @ cols.T).reshape(params.weights.shape)
    grad_b = g.sum(axis=1)
    grad_cols = params.weights.reshape(K, -1).T @ g
    grad_x = col2im(grad_cols, x.shape, (kh, kw), stride, pad)
    return grad_x, grad_w, grad_b


# -- max pooling ------------------------------------------------------------

@dataclass
class PoolMask:
    """Winner index inside each pooling window, plus the geometry to undo it."""

    argmax: np.ndarray  # [C, N, Ho, Wo], row-major index within the window
    input_shape: tuple
    window: tuple
    stride: tuple
    pad: tuple


def maxpool_forward(x: np.ndarray, window, stride, pad=0):
    if x.ndim != 4:
        raise ShapeError(f"pool input must be NCHW, got shape {x.shape}")
    N, C, H, W = x.shape
    kh, kw = as_pair(window)
    ho, wo = conv_geometry(x.shape, (kh, kw), stride, pad)
    cols = im2col(x, (kh, kw), stride, pad, fill=-np.inf).reshape(C, kh * kw, N, ho, wo)
    # np.argmax returns the first maximum: ties go to the lowest flat index.
    arg = cols.argmax(axis=1)
    out = np.take_along_axis(cols, arg[:, None], axis=1)[:, 0]
    mask = PoolMask(arg, x.shape, (kh, kw), as_pair(stride), as_pair(pad))
    return out.transpose(1, 0, 2, 3).copy(), mask


def maxpool_backward(mask: PoolMask, grad_out: np.ndarray) -> np.ndarray:
    N, C, _, _ = mask.input_shape
    kh, kw = mask.window
    _, _, ho, wo = grad_out.shape
    if grad_out.shape != (N, C) + mask.argmax.shape[2:]:
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match pooling mask")
    cols = np.zeros((C, kh * kw, N, ho, wo), dtype=grad_out.dtype)
    np.put_along_axis(cols, mask.argmax[:, None], grad_out.transpose(1, 0, 2, 3)[:, None], axis=1)
    return col2im(cols.reshape(C * kh * kw, N * ho * wo), mask.input_shape,
                  mask.window, mask.stride, mask.pad)


# -- activations ------------------------------------------------------------

ACTIVATIONS = ("relu", "sigmoid")


def _sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def activation_forward(kind: str, x: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(x, 0)
    if kind == "sigmoid":
        return _sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def activation_backward(kind: str, x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return grad_out * (x > 0)
    if kind == "sigmoid":
        s = _sigmoid(x)
        return grad_out * s * (1 - s)
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


# -- local response normalization -------------------------------------------

def _channel_window_sum(v: np.ndarray, n: int) -> np.ndarray:
    """Sum of ``v`` over the centred channel window of width ``n``, zero outside."""
    half = n // 2
    C = v.shape[1]
    padded = np.zeros((v.shape[0], C + 2 * half + 1) + v.shape[2:], dtype=v.dtype)
    np.cumsum(v, axis=1, out=padded[:, half + 1:half + 1 + C])
    padded[:, half + 1 + C:] = padded[:, half + C:half + 1 + C]
    return padded[:, n:n + C] - padded[:, :C]


def _lrn_scale(x, p: LrnParams):
    return p.k + (p.alpha / p.n) * _channel_window_sum(x * x, p.n)


def lrn_forward(x: np.ndarray, p: LrnParams = LrnParams()) -> np.ndarray:
    """Across-channel LRN: ``x / (k + alpha/n * sum_window x^2) ** beta``."""
    return x * _lrn_scale(x, p) ** -p.beta


def lrn_backward(x: np.ndarray, p: LrnParams, grad_out: np.ndarray) -> np.ndarray:
    scale = _lrn_scale(x, p)
    inner = grad_out * x * scale ** (-p.beta - 1)
    return grad_out * scale ** -p.beta - (2 * p.alpha * p.beta / p.n) * x * _channel_window_sum(inner, p.n)


# -- fully connected --------------------------------------------------------

def fc_forward(x: np.ndarray, params: LayerParams) -> np.ndarray:
    flat = x.reshape(x.shape[0], -1)
    if flat.shape[1] != params.weights.shape[1]:
        raise ShapeError(
            f"fully-connected layer expects {params.weights.shape[1]} inputs, got {flat.shape[1]}"
        )
    return flat @ params.weights.T + params.bias


def fc_backward(x, params: LayerParams, grad_out):
    flat = x.reshape(x.shape[0], -1)
    grad_w = grad_out.T @ flat
    grad_b = grad_out.sum(axis=0)
    grad_x = (grad_out @ params.weights).reshape(x.shape)
    return grad_x, grad_w, grad_b


# -- loss -------------------------------------------------------------------

def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent(logits: np.ndarray, labels):
    """Mean cross-entropy of a softmax head.

    Returns ``(loss, probs, grad_logits)`` where the gradient is already
    divided by the batch size.
    """
    labels = np.asarray(labels)
    N, K = logits.shape
    if labels.shape != (N,):
        raise ShapeError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise LabelError(f"labels must lie in [0, {K}), got range [{labels.min()}, {labels.max()}]")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_probs = z - log_norm
    probs = np.exp(log_probs)
    rows = np.arange(N)
    loss = -log_probs[rows, labels].mean()
    grad = probs.copy()
    grad[rows, labels] -= 1
    grad /= N
    return float(loss), probs, grad


# -- inception --------------------------------------------------------------

INCEPTION_BRANCHES = ("1x1", "3x3_reduce", "3x3", "5x5_reduce", "5x5", "pool_proj")


@dataclass(frozen=True)
class InceptionSpec:
    """Output widths of the four parallel paths, with 1x1 reductions."""

    c1: int
    c3_reduce: int
    c3: int
    c5_reduce: int
    c5: int
    pool_proj: int

    @property
    def out_channels(self) -> int:
        return self.c1 + self.c3 + self.c5 + self.pool_proj

    def conv_shapes(self, in_channels: int) -> dict[str, tuple]:
        return {
            "1x1": (self.c1, in_channels, 1, 1),
            "3x3_reduce": (self.c3_reduce, in_channels, 1, 1),
            "3x3": (self.c3, self.c3_reduce, 3, 3),
            "5x5_reduce": (self.c5_reduce, in_channels, 1, 1),
            "5x5": (self.c5, self.c5_reduce, 5, 5),
            "pool_proj": (self.pool_proj, in_channels, 1, 1),
        }


_PADS = {"1x1": 0, "3x3_reduce": 0, "3x3": 1, "5x5_reduce": 0, "5x5": 2, "pool_proj": 0}


@dataclass
class InceptionCache:
    x: np.ndarray
    pre: dict = field(default_factory=dict)   # conv outputs before activation
    post: dict = field(default_factory=dict)  # conv outputs after activation
    pooled: np.ndarray | None = None
    pool_mask: PoolMask | None = None
    widths: tuple = ()


def _conv_act(x, params, pad, activation, name, cache):
    pre = conv_forward(x, params, 1, pad)
    post = activation_forward(activation, pre) if activation else pre
    cache.pre[name] = pre
    cache.post[name] = post
    return post


def inception_forward(x: np.ndarray, params: dict[str, LayerParams], activation: str | None = "relu"):
    """Run the four paths and concatenate them along channels.

    ``params`` maps each name in :data:`INCEPTION_BRANCHES` to its conv
    parameters. The pooling path uses a 3x3, stride 1, pad 1 max pool.
    Returns ``(output, cache)``.
    """
    cache = InceptionCache(x=x)
    p1 = _conv_act(x, params["1x1"], 0, activation, "1x1", cache)
    r3 = _conv_act(x, params["3x3_reduce"], 0, activation, "3x3_reduce", cache)
    p3 = _conv_act(r3, params["3x3"], 1, activation, "3x3", cache)
    r5 = _conv_act(x, params["5x5_reduce"], 0, activation, "5x5_reduce", cache)
    p5 = _conv_act(r5, params["5x5"], 2, activation, "5x5", cache)
    cache.pooled, cache.pool_mask = maxpool_forward(x, 3, 1, 1)
    pp = _conv_act(cache.pooled, params["pool_proj"], 0, activation, "pool_proj", cache)
    outs = (p1, p3, p5, pp)
    spatial = {o.shape[2:] for o in outs}
    if len(spatial) != 1:
        raise ShapeError(f"inception branch spatial extents disagree: {[o.shape for o in outs]}")
    cache.widths = tuple(o.shape[1] for o in outs)
    return np.concatenate(outs, axis=1), cache


def inception_backward(cache: InceptionCache, params: dict[str, LayerParams], grad_out,
                       activation: str | None = "relu"):
    """Returns ``(grad_input, {branch: (grad_weights, grad_bias)})``."""
    grads = {}
    bounds = np.cumsum((0,) + cache.widths)
    g1, g3, g5, gp = (grad_out[:, bounds[i]:bounds[i + 1]] for i in range(4))

    def back(name, inp, g):
        if activation:
            g = activation_backward(activation, cache.pre[name], g)
        gx, gw, gb = conv_backward(inp, params[name], g, 1, _PADS[name])
        grads[name] = (gw, gb)
        return gx

    x = cache.x
    dx = back("1x1", x, g1)
    dx = dx + back("3x3_reduce", x, back("3x3", cache.post["3x3_reduce"], g3))
    dx = dx + back("5x5_reduce", x, back("5x5", cache.post["5x5_reduce"], g5))
    dx = dx + maxpool_backward(cache.pool_mask, back("pool_proj", cache.pooled, gp))
    return dx, grads
