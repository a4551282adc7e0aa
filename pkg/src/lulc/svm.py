"""Linear one-vs-rest SVM trained with a Pegasos-style subgradient solver.

The binary problem minimised is ``0.5*||w||^2 + C * sum_i max(0, 1 - y_i (w.x_i + b))``
with an unregularised bias.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import container


class DegenerateLabelError(ValueError):
    pass


def hinge_objective(w, b, x, y, C: float) -> float:
    margins = 1.0 - y * (x @ w + b)
    return float(0.5 * w @ w + C * np.maximum(margins, 0.0).sum())


def best_bias(scores, y, C: float) -> tuple[float, float]:
    """Exact minimiser over ``b`` of the hinge objective for fixed scores ``w.x``.

    The objective is convex and piecewise linear in ``b`` with breakpoints
    ``y_i - score_i``, so the minimum sits on one of them. Returns
    ``(b, hinge part of the objective)``.
    """
    pos = np.sort(1.0 - scores[y > 0])
    neg = np.sort(-1.0 - scores[y < 0])
    cand = np.concatenate([pos, neg])
    # positives contribute (t - b) for breakpoints t above b, negatives (b - t) below it
    pos_suffix = np.concatenate([np.cumsum(pos[::-1])[::-1], [0.0]])
    neg_prefix = np.concatenate([[0.0], np.cumsum(neg)])
    above = np.searchsorted(pos, cand, side="right")
    below = np.searchsorted(neg, cand, side="left")
    loss = (pos_suffix[above] - (len(pos) - above) * cand) + (below * cand - neg_prefix[below])
    i = int(np.argmin(loss))
    return float(cand[i]), float(C * max(loss[i], 0.0))


def svm_train_binary(features, labels, C: float = 1.0, seed: int = 0, iterations: int = 20000,
                     batch_size: int = 64, eval_every: int = 20, history: list | None = None):
    """Return ``(w, b)`` approximately minimising the hinge objective.

    Mini-batches are drawn without replacement from a seeded permutation,
    reshuffled every epoch. Steps follow the Pegasos ``1/(lambda*t)``
    schedule with ``lambda = 1/(C*N)``. Every ``eval_every`` steps the current
    iterate and the running average are scored on the full objective, each
    with its bias replaced by the exact minimiser for that ``w``; the best
    one seen is returned. ``history``, if given, receives
    ``(step, objective of the returned candidate so far)`` at each scoring.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    n, d = x.shape
    if n < 2 or not (np.any(y > 0) and np.any(y < 0)):
        raise DegenerateLabelError("binary SVM needs at least two samples and both labels present")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("binary labels must be -1 or +1")
    lam = 1.0 / (C * n)
    radius = np.sqrt(2.0 * C * n)  # the optimum lies inside this ball
    rng = np.random.default_rng(seed)
    size = min(batch_size, n)
    w, b = np.zeros(d), 0.0
    w_avg, b_avg = np.zeros(d), 0.0
    best = (hinge_objective(w, b, x, y, C), w.copy(), b)
    perm, pos = rng.permutation(n), 0
    for t in range(1, iterations + 1):
        if pos + size > n:
            perm, pos = rng.permutation(n), 0
        idx = perm[pos:pos + size]
        pos += size
        xb, yb = x[idx], y[idx]
        active = yb * (xb @ w + b) < 1.0
        eta = 1.0 / (lam * t)
        w = (1.0 - eta * lam) * w + (eta / size) * (yb[active] @ xb[active])
        b = b + (eta / size) * yb[active].sum()
        norm = np.sqrt(w @ w)
        if norm > radius:
            w *= radius / norm
        w_avg += (w - w_avg) / t
        b_avg += (b - b_avg) / t
        if t % eval_every == 0 or t == iterations:
            for cand_w in (w, w_avg):
                cand_b, hinge = best_bias(x @ cand_w, y, C)
                obj = 0.5 * float(cand_w @ cand_w) + hinge
                if obj < best[0]:
                    best = (obj, cand_w.copy(), cand_b)
            if history is not None:
                history.append((t, best[0]))
    return best[1], best[2]


@dataclass
class SvmModel:
    weights: np.ndarray  # [K, D], over standardised features
    bias: np.ndarray     # [K]
    C: float
    class_names: list
    mean: np.ndarray     # [D] feature standardisation
    scale: np.ndarray    # [D]

    def __post_init__(self):
        K = len(self.class_names)
        if K < 2 or len(set(self.class_names)) != K:
            raise ValueError("an SVM model needs at least two unique class names")
        if self.weights.shape != (K, self.feature_dim) or self.bias.shape != (K,):
            raise ValueError(f"weights {self.weights.shape} / bias {self.bias.shape} do not match K={K}")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("SVM weights must be finite")

    @property
    def feature_dim(self) -> int:
        return self.mean.shape[0]

    def decision_function(self, features) -> np.ndarray:
        z = (np.asarray(features, dtype=np.float64) - self.mean) / self.scale
        return z @ self.weights.T + self.bias


def standardize_stats(x):
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std[std == 0] = 1.0
    return mean, std


def svm_train_ovr(features, labels, K: int, C: float = 1.0, seed: int = 0,
                  class_names=None, **solver) -> SvmModel:
    x = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise ValueError(f"labels must lie in [0, {K})")
    if K < 2:
        raise ValueError("K must be >= 2")
    mean, scale = standardize_stats(x)
    z = (x - mean) / scale
    W = np.zeros((K, x.shape[1]))
    B = np.zeros(K)
    for k in range(K):
        y = np.where(labels == k, 1.0, -1.0)
        W[k], B[k] = svm_train_binary(z, y, C, seed=seed * 1009 + k, **solver)
    names = list(class_names) if class_names is not None else [str(k) for k in range(K)]
    return SvmModel(W, B, C, names, mean, scale)


def svm_predict(model: SvmModel, features) -> np.ndarray:
    """Argmax of the K decision values; ties go to the lowest class index."""
    return model.decision_function(features).argmax(axis=1)


def save_svm(model: SvmModel, path) -> None:
    meta = {"C": model.C, "class_names": list(model.class_names), "feature_dim": model.feature_dim}
    container.write_container(path, "svm", meta, {"weights": model.weights, "bias": model.bias,
                                                 "mean": model.mean, "scale": model.scale})


def load_svm(path) -> SvmModel:
    _, meta, t = container.read_container(path, expect_kind="svm")
    return SvmModel(t["weights"], t["bias"], meta["C"], meta["class_names"], t["mean"], t["scale"])


def write_features_csv(path, features, labels) -> None:
    features = np.asarray(features)
    rows = [[f"f{j}" for j in range(features.shape[1])] + ["label"]]
    rows += [[repr(float(v)) for v in row] + [str(int(lab))] for row, lab in zip(features, labels)]
    container.atomic_write_text(path, "\n".join(",".join(r) for r in rows) + "\n")


def read_features_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[-1] != "label":
            raise ValueError(f"{path}: last header column must be 'label'")
        rows = list(reader)
    d = len(header) - 1
    x = np.array([[float(v) for v in r[:-1]] for r in rows], dtype=np.float64).reshape(len(rows), d)
    y = np.array([int(r[-1]) for r in rows], dtype=np.int64)
    return x, y
