"""Desk-scale transfer-learning experiment on synthetic textures.

A small CNN is pre-trained on one texture domain, then reused on a second
domain with new classes, either by fine-tuning a replaced head or by feeding
penultimate features to a linear SVM. Both are compared with the same
network trained from a random initialisation for the same iteration budget.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataset import normalize
from .evaluation import evaluate
from .network import build_network, extract_features, from_checkpoint, replace_head, toy_cnn_spec
from .svm import svm_predict, svm_train_ovr
from .synthetic import DOMAIN_A, DOMAIN_B, texture_set
from .trainer import TrainConfig, predict, train


@dataclass
class TransferConfig:
    size: int = 16
    pretrain_per_class: int = 60
    pretrain_iterations: int = 400
    target_per_class: int = 30
    test_per_class: int = 30
    budget: int = 30
    feature_layer: str = "fc7"
    train: TrainConfig = field(default_factory=lambda: TrainConfig(
        base_lr=0.01, momentum=0.9, weight_decay=5e-4, batch_size=16, lr_policy="fixed", log_interval=10))


@dataclass
class TransferResult:
    seed: int
    finetune: float
    svm: float
    scratch: float


def run_transfer(seed: int, cfg: TransferConfig = TransferConfig()) -> TransferResult:
    mean = [0.5, 0.5, 0.5]
    xa, ya = texture_set(DOMAIN_A, cfg.pretrain_per_class, cfg.size, seed=10_000 + seed)
    xb, yb = texture_set(DOMAIN_B, cfg.target_per_class, cfg.size, seed=20_000 + seed)
    xt, yt = texture_set(DOMAIN_B, cfg.test_per_class, cfg.size, seed=30_000 + seed)
    xa, xb, xt = (normalize(v, mean) for v in (xa, xb, xt))

    base = build_network(toy_cnn_spec((3, cfg.size, cfg.size), len(DOMAIN_A)), init_seed=seed)
    pre_cfg = replace(cfg.train, iterations=cfg.pretrain_iterations, seed=seed)
    pretrained, _ = train(base, (xa, ya), pre_cfg)

    budget_cfg = replace(cfg.train, iterations=cfg.budget, seed=seed + 1)
    k = len(DOMAIN_B)

    tuned = from_checkpoint(replace_head(pretrained, k, head_lr_mult=10, body_lr_mult=1, init_seed=seed + 2))
    train(tuned, (xb, yb), budget_cfg)
    finetune_acc = evaluate(predict(tuned, xt), yt, k)[1]

    feats = from_checkpoint(pretrained)
    model = svm_train_ovr(extract_features(feats, cfg.feature_layer, xb), yb, k, C=1.0, seed=seed)
    svm_acc = evaluate(svm_predict(model, extract_features(feats, cfg.feature_layer, xt)), yt, k)[1]

    scratch = build_network(toy_cnn_spec((3, cfg.size, cfg.size), k), init_seed=seed + 3)
    train(scratch, (xb, yb), budget_cfg)
    scratch_acc = evaluate(predict(scratch, xt), yt, k)[1]
    return TransferResult(seed, finetune_acc, svm_acc, scratch_acc)


WALKTHROUGH_OUTPUTS = ("split.csv", "aug/manifest.csv", "model.bin", "train_log.csv", "confusion.csv")


def cli_walkthrough(workdir, seed: int = 42, iterations: int = 500, classes: int = 3, per_class: int = 20,
                    size: int = 8) -> dict:
    """Run split, augment, train and eval through the CLI inside ``workdir``.

    The split comes first so that every rotated variant stays in the part of
    its source image; only the training part is augmented. Paths passed to
    the CLI are relative, so two runs in different directories are comparable
    byte for byte. Returns the output file contents keyed by relative path.
    """
    import os

    from .cli import dispatch
    from .synthetic import write_class_tree

    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    old = os.getcwd()
    os.chdir(workdir)
    try:
        write_class_tree("raw", classes, per_class, size=size, seed=seed)
        steps = [
            ["split", "--data", "raw", "--out", "split.csv", "--seed", str(seed)],
            ["augment", "--in", "raw", "--split", "split.csv", "--part", "train", "--out", "aug",
             "--angles", "5,10,30,40", "--seed", str(seed)],
            ["train", "--data", "aug", "--out", "model.bin", "--log", "train_log.csv", "--iters", str(iterations),
             "--base-lr", "0.01", "--batch-size", "16", "--lr-policy", "fixed", "--log-interval", "50",
             "--seed", str(seed)],
            ["eval", "--ckpt", "model.bin", "--data", "raw", "--split", "split.csv", "--part", "test",
             "--out", "confusion.csv", "--seed", str(seed)],
        ]
        for argv in steps:
            code = dispatch(argv)
            if code != 0:
                raise RuntimeError(f"walkthrough step {argv[0]!r} exited with {code}")
        return {name: (workdir / name).read_bytes() for name in WALKTHROUGH_OUTPUTS}
    finally:
        os.chdir(old)
