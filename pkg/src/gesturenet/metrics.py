"""ROC AUC (binary and one-vs-rest), top-1 accuracy, row-normalised confusion."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class MetricError(ValueError):
    pass


@dataclass
class PredictionSet:
    """Per-clip class probabilities ``scores [N, K]`` and true ``labels [N]``."""

    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.scores.ndim != 2:
            raise MetricError(f"scores must be [N, K], got shape {self.scores.shape}")
        if self.labels.shape != (self.scores.shape[0],):
            raise MetricError("one label per score row required")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise MetricError(f"labels must lie in [0, {self.n_classes})")
        sums = self.scores.sum(axis=1)
        if np.any(np.abs(sums - 1) > 1e-6):
            raise MetricError("every score vector must sum to 1 within 1e-6")

    @property
    def n_classes(self) -> int:
        return self.scores.shape[1]

    def __len__(self) -> int:
        return self.labels.size


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    ranks = np.empty(values.size)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def binary_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Probability a random positive outscores a random negative (ties count 1/2)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    if scores.shape != labels.shape:
        raise MetricError("scores and labels differ in length")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC needs both positive and negative labels")
    ranks = _average_ranks(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def roc_curve(scores: Sequence[float], labels: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """(fpr, tpr) at every distinct threshold, from (0, 0) to (1, 1)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    y = labels[order]
    distinct = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tps = np.cumsum(y)[distinct]
    fps = (distinct + 1) - tps
    n_pos = max(int(y.sum()), 1)
    n_neg = max(int(y.size - y.sum()), 1)
    return np.r_[0.0, fps / n_neg], np.r_[0.0, tps / n_pos]


def ovr_auc(preds: PredictionSet) -> float:
    """Unweighted mean over classes of the class-vs-rest AUC."""
    aucs = []
    for k in range(preds.n_classes):
        member = (preds.labels == k).astype(int)
        if member.sum() == 0:
            raise MetricError(f"class {k} absent from labels; one-vs-rest AUC undefined")
        aucs.append(binary_auc(preds.scores[:, k], member))
    return float(np.mean(aucs))


def predicted_classes(scores: np.ndarray) -> np.ndarray:
    # np.argmax returns the first (lowest) index on exact ties
    return np.argmax(np.asarray(scores), axis=1)


def top1_and_confusion(preds: PredictionSet) -> tuple[float, np.ndarray]:
    """Top-1 accuracy and the row-normalised confusion matrix.

    ``confusion[i, j]`` is the fraction of true-class-``i`` clips predicted as
    ``j``. Rows without support are left as NaN so they stand out.
    """
    if len(preds) == 0:
        raise MetricError("no predictions")
    k = preds.n_classes
    counts = np.zeros((k, k))
    np.add.at(counts, (preds.labels, predicted_classes(preds.scores)), 1)
    support = counts.sum(axis=1)
    confusion = np.full((k, k), np.nan)
    has = support > 0
    confusion[has] = counts[has] / support[has, None]
    top1 = float(np.trace(counts) / len(preds))
    return top1, confusion


def task_auc(preds: PredictionSet) -> float:
    """Binary AUC on the class-1 score for 2 classes, one-vs-rest mean otherwise."""
    if preds.n_classes == 2:
        return binary_auc(preds.scores[:, 1], preds.labels)
    return ovr_auc(preds)


@dataclass
class SplitMetrics:
    auc: float
    top1: float
    confusion: np.ndarray
    roc: tuple[np.ndarray, np.ndarray] | None = None


def evaluate_predictions(preds: PredictionSet) -> SplitMetrics:
    top1, confusion = top1_and_confusion(preds)
    roc = roc_curve(preds.scores[:, 1], preds.labels) if preds.n_classes == 2 else None
    return SplitMetrics(task_auc(preds), top1, confusion, roc)


@dataclass
class EvalReport:
    splits: list[SplitMetrics] = field(default_factory=list)

    @property
    def mean_auc(self) -> float:
        return float(np.mean([s.auc for s in self.splits]))

    @property
    def mean_top1(self) -> float:
        return float(np.mean([s.top1 for s in self.splits]))

    @property
    def mean_confusion(self) -> np.ndarray:
        """Element-wise mean over splits; a row averages only the splits where it has support."""
        stack = np.array([s.confusion for s in self.splits])
        supported = ~np.isnan(stack[:, :, :1])
        count = supported.sum(axis=0)
        total = np.where(supported, stack, 0.0).sum(axis=0)
        with np.errstate(invalid="ignore"):
            return np.where(count > 0, total / np.maximum(count, 1), np.nan)

    def write(self, out_dir, split_ids: Sequence[int] | None = None) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        ids = list(split_ids) if split_ids is not None else list(range(len(self.splits)))
        with (out_dir / "metrics.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["split", "auc", "top1"])
            for k, s in zip(ids, self.splits):
                w.writerow([k, _fmt(s.auc), _fmt(s.top1)])
            w.writerow(["mean", _fmt(self.mean_auc), _fmt(self.mean_top1)])
        write_matrix(out_dir / "confusion_mean.csv", self.mean_confusion)
        for k, s in zip(ids, self.splits):
            write_matrix(out_dir / f"confusion_split{k}.csv", s.confusion)
            if s.roc is not None:
                with (out_dir / f"roc_split{k}.csv").open("w", newline="") as fh:
                    w = csv.writer(fh, lineterminator="\n")
                    w.writerow(["fpr", "tpr"])
                    for f, t in zip(*s.roc):
                        w.writerow([_fmt(f), _fmt(t)])


def _fmt(x: float) -> str:
    return repr(float(x))


def write_matrix(path, matrix: np.ndarray) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in matrix:
            w.writerow([_fmt(v) for v in row])
