"""Independent reference implementations used as test oracles."""
import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


def naive_matmul(a, b):
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    c = np.zeros((m, n), dtype=np.float64)
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += float(a[i, t]) * float(b[t, j])
            c[i, j] = s
    return c


def naive_conv(x, w, b, stride=1, pad=0):
    N, C, H, W = x.shape
    K, _, kh, kw = w.shape
    xp = np.zeros((N, C, H + 2 * pad, W + 2 * pad), dtype=np.float64)
    xp[:, :, pad:pad + H, pad:pad + W] = x
    ho = (H + 2 * pad - kh) // stride + 1
    wo = (W + 2 * pad - kw) // stride + 1
    out = np.zeros((N, K, ho, wo))
    for n in range(N):
        for k in range(K):
            for i in range(ho):
                for j in range(wo):
                    s = float(b[k])
                    for c in range(C):
                        for di in range(kh):
                            for dj in range(kw):
                                s += xp[n, c, i * stride + di, j * stride + dj] * float(w[k, c, di, dj])
                    out[n, k, i, j] = s
    return out


def naive_maxpool(x, k, stride, pad=0):
    N, C, H, W = x.shape
    ho = (H + 2 * pad - k) // stride + 1
    wo = (W + 2 * pad - k) // stride + 1
    out = np.zeros((N, C, ho, wo), dtype=x.dtype)
    for n in range(N):
        for c in range(C):
            for i in range(ho):
                for j in range(wo):
                    best = -np.inf
                    for di in range(k):
                        for dj in range(k):
                            r, q = i * stride + di - pad, j * stride + dj - pad
                            if 0 <= r < H and 0 <= q < W:
                                best = max(best, x[n, c, r, q])
                    out[n, c, i, j] = best
    return out


def numeric_grad(f, x, eps=1e-5):
    """Central differences of scalar ``f`` with respect to every entry of ``x`` (in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = f()
        flat[i] = orig - eps
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return g


def max_rel_error(a, n, floor=1e-6):
    a, n = np.asarray(a, dtype=np.float64), np.asarray(n, dtype=np.float64)
    return float((np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)).max())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def svm_grid_oracle(x, y, C, half_width=8.0, points=81, rounds=6):
    """Brute-force minimum of the binary hinge objective over a (w1, w2, b) lattice.

    The lattice is re-centred on the best point and shrunk each round.
    """
    centre = np.zeros(3)
    width = half_width
    best = np.inf
    for _ in range(rounds):
        axes = [np.linspace(c - width, c + width, points) for c in centre]
        w1, w2, b = np.meshgrid(*axes, indexing="ij")
        obj = 0.5 * (w1 ** 2 + w2 ** 2)
        for (a1, a2), label in zip(x, y):
            obj += C * np.maximum(0.0, 1.0 - label * (w1 * a1 + w2 * a2 + b))
        i = np.unravel_index(np.argmin(obj), obj.shape)
        best = min(best, float(obj[i]))
        centre = np.array([w1[i], w2[i], b[i]])
        width *= 4.0 / (points - 1) * 2
    return best
