"""Confusion matrices, class merging, per-class recall and k-fold scoring."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .dataset import DatasetIndex, kfold

CSV_CORNER = "true\\predicted"


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # [K, K] int64, rows = true class, columns = predicted
    class_names: list[str]

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        K = len(self.class_names)
        if self.counts.shape != (K, K):
            raise ValueError(f"counts shape {self.counts.shape} does not match {K} class names")
        if (self.counts < 0).any():
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def trace(self) -> int:
        return int(np.trace(self.counts))

    def accuracy_fraction(self) -> Fraction:
        return Fraction(self.trace, self.total) if self.total else Fraction(0)

    @property
    def accuracy(self) -> float:
        return float(self.accuracy_fraction())

    def index(self, cls) -> int:
        if isinstance(cls, (int, np.integer)):
            if not 0 <= cls < len(self.class_names):
                raise ValueError(f"class index {cls} out of range")
            return int(cls)
        return self.class_names.index(cls)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([CSV_CORNER] + list(self.class_names))
        for name, row in zip(self.class_names, self.counts):
            w.writerow([name] + [int(v) for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ConfusionMatrix":
        rows = list(csv.reader(io.StringIO(text)))
        if rows[0][0] != CSV_CORNER:
            raise ValueError(f"confusion CSV must start with {CSV_CORNER!r} (rows are true classes)")
        return cls(np.array([[int(v) for v in r[1:]] for r in rows[1:]]), rows[0][1:])


def evaluate(predictions, truths, num_classes: int | None = None, class_names=None):
    """Tally ``(truth, prediction)`` pairs; returns ``(ConfusionMatrix, accuracy)``."""
    p = np.asarray(predictions, dtype=np.int64)
    t = np.asarray(truths, dtype=np.int64)
    if p.shape != t.shape or p.ndim != 1:
        raise ValueError(f"predictions and truths must be equal-length vectors, got {p.shape} and {t.shape}")
    if class_names is not None:
        num_classes = len(class_names)
    if num_classes is None:
        num_classes = int(max(p.max(initial=-1), t.max(initial=-1))) + 1
    if p.size and (min(p.min(), t.min()) < 0 or max(p.max(), t.max()) >= num_classes):
        raise ValueError(f"class indices must lie in [0, {num_classes})")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    names = list(class_names) if class_names is not None else [str(k) for k in range(num_classes)]
    cm = ConfusionMatrix(counts, names)
    return cm, cm.accuracy


def merge_classes(cm: ConfusionMatrix, a, b) -> ConfusionMatrix:
    """Fuse classes ``a`` and ``b`` (by index or name) into one named ``"a+b"``.

    The merged class takes the lower of the two positions.
    """
    i, j = cm.index(a), cm.index(b)
    if i == j:
        raise ValueError("cannot merge a class with itself")
    lo, hi = min(i, j), max(i, j)
    c = cm.counts.copy()
    c[lo] += c[hi]
    c[:, lo] += c[:, hi]
    c = np.delete(np.delete(c, hi, axis=0), hi, axis=1)
    names = list(cm.class_names)
    names[lo] = f"{cm.class_names[i]}+{cm.class_names[j]}"
    del names[hi]
    return ConfusionMatrix(c, names)


def per_class_accuracy(cm: ConfusionMatrix) -> list[float | None]:
    """Recall per true class; ``None`` where the class has no samples."""
    out = []
    for k, row in enumerate(cm.counts):
        total = int(row.sum())
        out.append(int(row[k]) / total if total else None)
    return out


@dataclass
class CrossValidationResult:
    fold_accuracies: list[float]
    confusions: list[ConfusionMatrix]

    @property
    def mean(self) -> float:
        return float(np.mean(self.fold_accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.fold_accuracies))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["fold", "accuracy"])
        for i, acc in enumerate(self.fold_accuracies):
            w.writerow([i, repr(acc)])
        w.writerow(["mean", repr(self.mean)])
        w.writerow(["std", repr(self.std)])
        return buf.getvalue()


def cross_validate(pipeline, index: DatasetIndex, k: int = 5, seed: int = 42) -> CrossValidationResult:
    """Score ``pipeline`` on stratified folds.

    ``pipeline(train_positions, val_positions)`` trains on the first list of
    sample positions in ``index`` and returns class predictions for the
    second. The headline number is the unweighted mean of fold accuracies.
    """
    accs, cms = [], []
    for plan in kfold(index, k, seed):
        train_pos = plan.positions(index, "train")
        val_pos = plan.positions(index, "val")
        preds = pipeline(train_pos, val_pos)
        truths = [index.samples[i][1] for i in val_pos]
        cm, acc = evaluate(preds, truths, class_names=index.classes)
        accs.append(acc)
        cms.append(cm)
    return CrossValidationResult(accs, cms)
