"""Directory-per-class image inventories, stratified splits and k folds."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .container import atomic_write_text
from .ppm import read_ppm

IMAGE_SUFFIXES = (".ppm",)
PARTS = ("train", "val", "test")


class ScanError(ValueError):
    pass


class StratificationError(ValueError):
    pass


@dataclass
class DatasetIndex:
    classes: list[str]
    samples: list[tuple[str, int]]  # (path, class index), sorted by path
    root: str = ""
    skipped: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        paths = [p for p, _ in self.samples]
        if len(set(paths)) != len(paths):
            raise ValueError("sample paths must be unique")
        for p, c in self.samples:
            if not 0 <= c < len(self.classes):
                raise ValueError(f"class index {c} of {p!r} out of range")

    def __len__(self):
        return len(self.samples)

    @property
    def labels(self) -> np.ndarray:
        return np.array([c for _, c in self.samples], dtype=np.int64)

    def by_class(self) -> list[list[int]]:
        """Sample positions grouped per class, each group ordered by path."""
        groups: list[list[int]] = [[] for _ in self.classes]
        for i in sorted(range(len(self.samples)), key=lambda i: self.samples[i][0]):
            groups[self.samples[i][1]].append(i)
        return groups

    def subset(self, positions) -> "DatasetIndex":
        return DatasetIndex(self.classes, [self.samples[i] for i in positions], self.root)


def scan_dataset(root) -> DatasetIndex:
    """Index ``root/<class>/<image>.ppm``; classes and samples sorted lexicographically."""
    root = Path(root)
    if not root.is_dir():
        raise ScanError(f"dataset root {str(root)!r} is not a directory")
    classes = sorted(p.name for p in root.iterdir() if p.is_dir())
    if not classes:
        raise ScanError(f"no class directories under {str(root)!r}")
    samples, skipped, warns = [], [], []
    for ci, name in enumerate(classes):
        found = 0
        for f in sorted((root / name).iterdir()):
            if f.is_file() and f.suffix.lower() in IMAGE_SUFFIXES:
                samples.append((str(f), ci))
                found += 1
            else:
                skipped.append(str(f))
        if not found:
            warns.append(f"class {name!r} has no images")
    samples.sort()
    return DatasetIndex(classes, samples, str(root), skipped, warns)


@dataclass
class SplitPlan:
    """Partition of an index's samples into named parts (or a train/val fold)."""

    assignment: dict[str, str]  # sample path -> part name
    seed: int
    mode: str  # "ratio(60,20,20)" or "kfold(5)[i]"

    def paths(self, part: str) -> list[str]:
        return sorted(p for p, a in self.assignment.items() if a == part)

    def positions(self, index: DatasetIndex, part: str) -> list[int]:
        return [i for i, (p, _) in enumerate(index.samples) if self.assignment.get(p) == part]

    def to_csv(self, index: DatasetIndex) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["path", "part", "class"])
        for p, c in sorted(index.samples):
            w.writerow([p, self.assignment[p], index.classes[c]])
        return buf.getvalue()

    def save(self, path, index: DatasetIndex) -> None:
        atomic_write_text(path, self.to_csv(index))


def read_split_csv(path) -> dict[str, str]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and not {"path", "part"} <= set(rows[0]):
        raise ValueError(f"{path}: expected columns path,part,class")
    return {r["path"]: r["part"] for r in rows}


def _class_rng(seed: int, class_index: int) -> np.random.Generator:
    return np.random.default_rng([seed, class_index])


def largest_remainder(n: int, ratios) -> list[int]:
    """Integer counts summing to ``n`` closest to ``n * r / sum(ratios)``; ties favour earlier parts."""
    total = sum(ratios)
    exact = [n * r / total for r in ratios]
    counts = [int(e) for e in exact]
    order = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def split(index: DatasetIndex, ratios=(60, 20, 20), seed: int = 42) -> SplitPlan:
    """Stratified split: per-class seeded shuffle, then a proportional cut."""
    ratios = tuple(ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or sum(ratios) != 100:
        raise ValueError(f"ratios must be three non-negative numbers summing to 100, got {ratios}")
    nonzero = sum(1 for r in ratios if r > 0)
    assignment = {}
    for ci, members in enumerate(index.by_class()):
        if members and len(members) < nonzero:
            raise StratificationError(
                f"class {index.classes[ci]!r} has {len(members)} samples, fewer than {nonzero} parts")
        order = _class_rng(seed, ci).permutation(len(members))
        counts = largest_remainder(len(members), ratios)
        pos = 0
        for part, count in zip(PARTS, counts):
            for j in order[pos:pos + count]:
                assignment[index.samples[members[j]][0]] = part
            pos += count
    return SplitPlan(assignment, seed, "ratio({},{},{})".format(*ratios))


def kfold(index: DatasetIndex, k: int = 5, seed: int = 42) -> list[SplitPlan]:
    """Stratified folds; plan ``i`` validates on fold ``i`` and trains on the rest."""
    groups = index.by_class()
    smallest = min(len(g) for g in groups)
    if k < 2 or k > smallest:
        raise ValueError(f"k must lie in [2, {smallest}] (smallest class size), got {k}")
    fold_of = {}
    for ci, members in enumerate(groups):
        order = _class_rng(seed, ci).permutation(len(members))
        sizes = [len(members) // k + (1 if f < len(members) % k else 0) for f in range(k)]
        pos = 0
        for f, size in enumerate(sizes):
            for j in order[pos:pos + size]:
                fold_of[index.samples[members[j]][0]] = f
            pos += size
    return [SplitPlan({p: ("val" if f == i else "train") for p, f in fold_of.items()}, seed, f"kfold({k})[{i}]")
            for i in range(k)]


def fold_csv(plans: list[SplitPlan], index: DatasetIndex) -> str:
    """One row per sample with the fold in which it is validated."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["path", "fold", "class"])
    for p, c in sorted(index.samples):
        fold = next(i for i, plan in enumerate(plans) if plan.assignment[p] == "val")
        w.writerow([p, fold, index.classes[c]])
    return buf.getvalue()


def compute_mean(paths, loader=read_ppm) -> np.ndarray:
    """Per-channel mean of training pixels, scaled to [0, 1], accumulated in float64."""
    total = np.zeros(3, dtype=np.float64)
    count = 0
    for p in paths:
        img = np.asarray(loader(p))
        total += img.reshape(-1, img.shape[-1]).sum(axis=0, dtype=np.float64)
        count += img.shape[0] * img.shape[1]
    if count == 0:
        raise ValueError("cannot compute a mean over zero images")
    return total / (255.0 * count)


def normalize(batch, means) -> np.ndarray:
    """uint8 ``[N,H,W,3]`` images to float32 NCHW, scaled to [0, 1] and mean-centred."""
    x = np.asarray(batch, dtype=np.float64) / 255.0 - np.asarray(means, dtype=np.float64)
    return np.ascontiguousarray(x.transpose(0, 3, 1, 2), dtype=np.float32)


def load_images(index: DatasetIndex, positions=None, loader=read_ppm):
    positions = range(len(index)) if positions is None else positions
    imgs = [loader(index.samples[i][0]) for i in positions]
    labels = np.array([index.samples[i][1] for i in positions], dtype=np.int64)
    return (np.stack(imgs) if imgs else np.zeros((0, 1, 1, 3), np.uint8)), labels
