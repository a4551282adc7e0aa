"""SGD with momentum, weight decay and per-layer learning-rate multipliers."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .layers import softmax_xent
from .network import Checkpoint, Network


class DivergenceError(FloatingPointError):
    def __init__(self, message, iteration):
        super().__init__(message)
        self.iteration = iteration


@dataclass
class TrainConfig:
    base_lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 5e-4
    iterations: int = 25000
    batch_size: int = 32
    lr_policy: str = "step"  # "fixed" or "step"
    gamma: float = 0.1
    step_size: int = 10000
    seed: int = 42
    log_interval: int = 100

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.iterations < 0 or self.batch_size < 1 or self.log_interval < 1:
            raise ValueError("iterations >= 0, batch_size >= 1 and log_interval >= 1 required")
        if self.lr_policy not in ("fixed", "step"):
            raise ValueError(f"unknown lr_policy {self.lr_policy!r}")
        if self.lr_policy == "step" and (self.step_size < 1 or self.gamma <= 0):
            raise ValueError("step policy needs step_size >= 1 and gamma > 0")

    def learning_rate(self, iteration: int) -> float:
        if self.lr_policy == "fixed":
            return self.base_lr
        return self.base_lr * self.gamma ** (iteration // self.step_size)


def sgd_step(blob, grad, velocity, cfg: TrainConfig, lr_mult: float, iteration: int = 0):
    """One momentum update. Returns the new ``(blob, velocity)``.

    A zero ``lr_mult`` returns the inputs untouched.
    """
    if blob.shape != grad.shape or blob.shape != velocity.shape:
        raise ValueError(f"shape mismatch: blob {blob.shape}, grad {grad.shape}, velocity {velocity.shape}")
    if not np.all(np.isfinite(grad)):
        raise DivergenceError(f"non-finite gradient at iteration {iteration}", iteration)
    if lr_mult == 0:
        return blob, velocity
    lr = cfg.learning_rate(iteration) * lr_mult
    velocity = cfg.momentum * velocity - lr * (grad + cfg.weight_decay * blob)
    return blob + velocity, velocity


@dataclass
class TrainingLog:
    rows: list = field(default_factory=list)  # (iteration, loss, train_accuracy)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "loss", "train_accuracy"])
        for it, loss, acc in self.rows:
            w.writerow([it, repr(float(loss)), repr(float(acc))])
        return buf.getvalue()

    @property
    def losses(self) -> list[float]:
        return [r[1] for r in self.rows]


def batch_order(n: int, batch_size: int, iterations: int, seed: int):
    """Yield index arrays for each iteration: a seeded reshuffle per epoch."""
    rng = np.random.default_rng(seed)
    size = min(batch_size, n)
    perm, pos = rng.permutation(n), 0
    for _ in range(iterations):
        if pos + size > n:
            perm, pos = rng.permutation(n), 0
        yield perm[pos:pos + size]
        pos += size


def train(net: Network, data, cfg: TrainConfig) -> tuple[Checkpoint, TrainingLog]:
    """Fine-tune ``net`` in place on ``data = (images [N,C,H,W], labels [N])``.

    Each log row averages loss and accuracy over the iterations since the
    previous row.
    """
    x, y = data
    y = np.asarray(y)
    if len(x) != len(y) or len(y) == 0:
        raise ValueError(f"need equal, non-zero numbers of images and labels ({len(x)} vs {len(y)})")
    if y.min() < 0 or y.max() >= net.spec.num_classes:
        raise ValueError(f"labels must lie in [0, {net.spec.num_classes})")
    x = x.astype(net.dtype, copy=False)
    log = TrainingLog()
    mults = net.lr_mults()
    velocity = {k: np.zeros_like(v) for k, v in net.blobs().items()}
    start = int(net.meta.get("iteration", 0))
    loss_sum, correct, seen, window = 0.0, 0, 0, 0
    last_good = start
    for i, idx in enumerate(batch_order(len(y), cfg.batch_size, cfg.iterations, cfg.seed)):
        it = start + i
        logits = net.forward(x[idx])
        loss, probs, grad = softmax_xent(logits, y[idx])
        if not np.isfinite(loss):
            raise DivergenceError(f"loss became non-finite at iteration {it}; last good iteration {last_good}",
                                  last_good)
        grads = net.backward(grad.astype(net.dtype, copy=False))
        for unit, p in net.params.items():
            for attr in ("weights", "bias"):
                name = f"{unit}.{attr}"
                new, velocity[name] = sgd_step(getattr(p, attr), grads[name], velocity[name], cfg, mults[name], it)
                setattr(p, attr, new)
        last_good = it + 1
        loss_sum += loss
        correct += int((probs.argmax(axis=1) == y[idx]).sum())
        seen += len(idx)
        window += 1
        if (i + 1) % cfg.log_interval == 0 or i + 1 == cfg.iterations:
            log.rows.append((it + 1, loss_sum / window, correct / seen))
            loss_sum, correct, seen, window = 0.0, 0, 0, 0
    net.meta["iteration"] = start + cfg.iterations
    return net.to_checkpoint(), log


def predict(net: Network, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    out = [net.forward(x[i:i + batch_size].astype(net.dtype, copy=False)).argmax(axis=1)
           for i in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


@dataclass
class GradCheckReport:
    max_rel_error: dict  # blob name -> worst relative error over the sampled entries
    tolerance: float
    checked: dict  # blob name -> number of sampled entries

    @property
    def failed(self) -> list[str]:
        return [k for k, v in self.max_rel_error.items() if not v < self.tolerance]

    @property
    def ok(self) -> bool:
        return not self.failed


def relative_error(analytic, numeric, floor: float = 1e-6):
    """``|a - n| / max(|a|, |n|, floor)``; the floor keeps near-zero entries from blowing up."""
    a, n = np.asarray(analytic, dtype=np.float64), np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def gradient_check(net: Network, batch, epsilon: float = 1e-6, tolerance: float = 1e-5,
                   samples_per_blob: int = 50, seed: int = 0, backward=None) -> GradCheckReport:
    """Compare backprop against central differences of the softmax loss at float64.

    ``batch`` is ``(images, labels)``. At most ``samples_per_blob`` entries of
    each blob are perturbed (all of them when the blob is smaller). The
    network is converted to float64 internally; ``net`` is not modified.
    ``backward`` substitutes the gradient routine, for testing the checker.
    """
    x, y = batch
    net64 = net.astype(np.float64)
    x = np.asarray(x, dtype=np.float64)

    def loss_at():
        return softmax_xent(net64.forward(x), y)[0]

    _, _, g = softmax_xent(net64.forward(x), y)
    grads = (backward or Network.backward)(net64, g)
    rng = np.random.default_rng(seed)
    errors, checked = {}, {}
    for name, blob in net64.blobs().items():
        flat = blob.reshape(-1)
        count = min(samples_per_blob, flat.size)
        picks = rng.choice(flat.size, size=count, replace=False)
        numeric = np.empty(count)
        for j, k in enumerate(picks):
            orig = flat[k]
            flat[k] = orig + epsilon
            up = loss_at()
            flat[k] = orig - epsilon
            down = loss_at()
            flat[k] = orig
            numeric[j] = (up - down) / (2 * epsilon)
        errors[name] = float(relative_error(grads[name].reshape(-1)[picks], numeric).max())
        checked[name] = count
    return GradCheckReport(errors, tolerance, checked)
