"""Stratified splits, upsampling balance, and the batch-size-1 Adam loop."""

from __future__ import annotations

import logging
import math
import time
import zlib
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .autodiff import adam_step, softmax_cross_entropy
from .metrics import PredictionSet
from .model import ModelParams, forward_clip, predict_proba

log = logging.getLogger(__name__)

TASK_CLASSES = {"identification": 2, "classification": 5}
TASK_EPOCHS = {"identification": 25, "classification": 7}


class TrainingError(RuntimeError):
    pass


def subseed(seed: int, name: str, *extra: int) -> int:
    """Named, independent sub-seed derived from the run seed."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode()), *[int(e) for e in extra]])
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class LabeledClip:
    ref: str
    label: int
    duration: float = 0.0


@dataclass(frozen=True)
class TrainConfig:
    task: str = "identification"
    epochs: Optional[int] = None
    lr: float = 1e-5
    batch_size: int = 1
    optimizer: str = "adam"
    splits: int = 3
    train_fraction: float = 0.8
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 100.0

    def __post_init__(self):
        if self.task not in TASK_CLASSES:
            raise ValueError(f"unknown task {self.task!r}")
        if self.batch_size != 1:
            raise ValueError("only batch size 1 is supported")
        if self.optimizer != "adam":
            raise ValueError("only the adam optimizer is supported")
        if self.epochs is not None and self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    @property
    def n_classes(self) -> int:
        return TASK_CLASSES[self.task]

    @property
    def effective_epochs(self) -> int:
        return self.epochs if self.epochs is not None else TASK_EPOCHS[self.task]


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _by_class(clips: Sequence[LabeledClip]) -> dict[int, list[int]]:
    groups: dict[int, list[int]] = defaultdict(list)
    for i, clip in enumerate(clips):
        groups[clip.label].append(i)
    return dict(sorted(groups.items()))


def stratified_train_counts(class_counts: Sequence[int], train_fraction: float = 0.8) -> list[int]:
    """Per-class train counts: round-half-up of ``fraction * n``, capped at ``n - 1``."""
    return [min(round_half_up(train_fraction * n), n - 1) for n in class_counts]


def make_splits(
    corpus: Sequence[LabeledClip], n_splits: int = 3, train_fraction: float = 0.8, seed: int = 0
) -> list[tuple[list[LabeledClip], list[LabeledClip]]]:
    """Independent seeded stratified resamples; both halves keep corpus order."""
    if not corpus:
        raise ValueError("corpus is empty")
    groups = _by_class(corpus)
    for label, members in groups.items():
        if len(members) < 2:
            raise ValueError(f"class {label} has {len(members)} clip(s); stratified splitting needs at least 2")
    splits = []
    for k in range(n_splits):
        rng = np.random.default_rng(subseed(seed, "split", k))
        train_idx: list[int] = []
        for members, n_train in zip(groups.values(), stratified_train_counts([len(m) for m in groups.values()], train_fraction)):
            perm = rng.permutation(len(members))
            train_idx.extend(members[j] for j in perm[:n_train])
        chosen = set(train_idx)
        train = [c for i, c in enumerate(corpus) if i in chosen]
        test = [c for i, c in enumerate(corpus) if i not in chosen]
        splits.append((train, test))
    return splits


def upsample_balance(train: Sequence[LabeledClip], seed: int = 0) -> list[LabeledClip]:
    """Repeat minority-class clips (cyclically, seeded order) up to the majority count."""
    groups = _by_class(train)
    if not groups:
        raise ValueError("training set is empty")
    target = max(len(m) for m in groups.values())
    out: list[LabeledClip] = []
    for label, members in groups.items():
        out.extend(train[i] for i in members)
        deficit = target - len(members)
        if deficit:
            perm = np.random.default_rng(subseed(seed, "balance", label)).permutation(len(members))
            out.extend(train[members[perm[j % len(members)]]] for j in range(deficit))
    return out


@dataclass
class EpochLog:
    epoch: int
    mean_train_loss: float
    wall_seconds: float
    clipped_steps: int = 0


@dataclass
class TrainResult:
    params: ModelParams
    epochs: list[EpochLog] = field(default_factory=list)


SampleHook = Callable[[str, np.random.Generator], tuple[np.ndarray, np.ndarray]]


def train(
    model: ModelParams,
    train_set: Sequence[LabeledClip],
    cfg: TrainConfig,
    hook: SampleHook,
    on_epoch: Optional[Callable[[EpochLog], None]] = None,
) -> TrainResult:
    """Train in place, one Adam step per clip visit.

    ``hook(ref, rng)`` must return the two ``[T, 3, h, w]`` streams for a
    train-mode sample of clip ``ref``; ``rng`` is fresh for every visit.
    """
    if model.spec.n_classes != cfg.n_classes:
        raise ValueError(f"model has {model.spec.n_classes} classes, task {cfg.task} needs {cfg.n_classes}")
    balanced = upsample_balance(train_set, cfg.seed)
    store = model.store
    result = TrainResult(model)
    for epoch in range(cfg.effective_epochs):
        start = time.perf_counter()
        order = np.random.default_rng(subseed(cfg.seed, "shuffle", epoch)).permutation(len(balanced))
        losses = []
        clipped = 0
        for pos, i in enumerate(order):
            clip = balanced[i]
            rgb, flow = hook(clip.ref, np.random.default_rng(subseed(cfg.seed, "sample", epoch, pos)))
            store.zero_grad()
            loss = softmax_cross_entropy(forward_clip(model, rgb, flow), clip.label)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss on clip {clip.ref} in epoch {epoch}")
            loss.backward()
            grads = store.grads()
            norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))
            if not math.isfinite(norm):
                raise TrainingError(f"non-finite gradient on clip {clip.ref} in epoch {epoch}")
            if norm > cfg.clip_norm:
                scale = cfg.clip_norm / norm
                grads = {n: g * scale for n, g in grads.items()}
                clipped += 1
                log.warning("gradient norm %.3g clipped to %.3g (clip %s, epoch %d)", norm, cfg.clip_norm, clip.ref, epoch)
            adam_step(store, grads, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
            losses.append(value)
        entry = EpochLog(epoch, float(np.mean(losses)), time.perf_counter() - start, clipped)
        result.epochs.append(entry)
        log.info("epoch %d mean loss %.5f", epoch, entry.mean_train_loss)
        if on_epoch is not None:
            on_epoch(entry)
    return result


def predict(model: ModelParams, clips: Sequence[LabeledClip], hook: Callable[[str], tuple[np.ndarray, np.ndarray]]) -> PredictionSet:
    """Softmax scores for every clip using eval-mode samples from ``hook(ref)``."""
    scores = []
    for clip in clips:
        rgb, flow = hook(clip.ref)
        scores.append(predict_proba(model, rgb, flow))
    return PredictionSet(np.array(scores).reshape(len(clips), model.spec.n_classes), [c.label for c in clips])
