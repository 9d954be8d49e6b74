"""Deterministic synthetic motion-gesture clips.

Each clip is a static value-noise background with a textured foreground whose
motion follows one of five programs (the gesture classes) or, for the negative
class of the identification task, no motion at all. Labels are recoverable
from motion alone; :func:`rule_classify` checks that with an exhaustive
block-matching oracle that never touches the learned pipeline.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .video import FrameSequence, decode_sequence, write_gfvs

RIGHTWARD, LEFTWARD, CLOCKWISE, EXPANSION, OSCILLATION = range(5)
NEGATIVE = -1
MOTION_NAMES = {
    RIGHTWARD: "rightward",
    LEFTWARD: "leftward",
    CLOCKWISE: "clockwise",
    EXPANSION: "expansion",
    OSCILLATION: "oscillation",
    NEGATIVE: "static",
}
GESTURE_CLASS_COUNTS = (150, 101, 96, 117, 47)
MANIFEST_FIELDS = ("path", "label", "duration", "seed", "motion")


@dataclass(frozen=True)
class SynthSpec:
    """Corpus recipe.

    ``clips_per_class`` is one count for every class or a per-class tuple
    indexed by label (for identification, ``(negatives, positives)``).
    """

    task: str = "identification"
    clips_per_class: Union[int, tuple[int, ...]] = 40
    resolution: tuple[int, int] = (240, 320)
    fps: float = 30.0
    duration_range: tuple[float, float] = (5.0, 13.0)
    noise_sigma: float = 3.0
    speed_range: tuple[float, float] = (1.0, 3.0)
    speed_jitter: float = 0.0
    distractor_amplitude: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.task not in ("identification", "classification"):
            raise ValueError(f"task must be identification or classification, got {self.task!r}")
        counts = self.class_counts()
        if len(counts) != self.n_classes:
            raise ValueError(f"{self.task} needs {self.n_classes} class counts, got {len(counts)}")
        if min(counts) < 2:
            raise ValueError("every class needs at least 2 clips")
        lo, hi = self.duration_range
        if not 0 < lo <= hi:
            raise ValueError(f"invalid duration range {self.duration_range}")
        if not self.fps > 0:
            raise ValueError("fps must be positive")

    @property
    def n_classes(self) -> int:
        return 2 if self.task == "identification" else 5

    def class_counts(self) -> tuple[int, ...]:
        if isinstance(self.clips_per_class, int):
            return (self.clips_per_class,) * self.n_classes
        return tuple(int(c) for c in self.clips_per_class)


def scaled_counts(counts: Sequence[int], factor: float) -> tuple[int, ...]:
    """Scale class counts with round-half-up."""
    return tuple(int(math.floor(c * factor + 0.5)) for c in counts)


@dataclass
class ClipRecord:
    path: str
    label: int
    duration: float
    seed: int
    motion: str = ""


@dataclass
class Manifest:
    task: str
    records: list[ClipRecord] = field(default_factory=list)
    root: Path = Path(".")

    def labels(self) -> list[int]:
        return [r.label for r in self.records]

    def clip_path(self, record: ClipRecord) -> Path:
        return self.root / record.path

    def write(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(MANIFEST_FIELDS)
            for r in self.records:
                writer.writerow([r.path, r.label, f"{r.duration:.6f}", r.seed, r.motion])

    @classmethod
    def read(cls, path, task: str = "") -> "Manifest":
        path = Path(path)
        if path.is_dir():
            path = path / "manifest.csv"
        if not path.is_file():
            raise FileNotFoundError(f"no manifest at {path}")
        with path.open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        records = [
            ClipRecord(r["path"], int(r["label"]), float(r["duration"]), int(r["seed"]), r.get("motion", ""))
            for r in rows
        ]
        if not task:
            task = "identification" if max((r.label for r in records), default=0) <= 1 else "classification"
        return cls(task, records, path.parent)


# -- texture and rendering -------------------------------------------------


def value_noise(shape: tuple[int, int], cell: float, rng: np.random.Generator, octaves: int = 3) -> np.ndarray:
    """Periodic smooth noise in [0, 1] with feature size ~``cell`` pixels."""
    h, w = shape
    out = np.zeros(shape)
    amp, total = 1.0, 0.0
    for o in range(octaves):
        c = max(cell / (2**o), 1.0)
        gh, gw = max(int(round(h / c)), 2), max(int(round(w / c)), 2)
        lattice = rng.random((gh, gw))
        ys = np.arange(h) * gh / h
        xs = np.arange(w) * gw / w
        out += amp * _sample_periodic(lattice, ys[:, None], xs[None, :], smooth=True)
        total += amp
        amp *= 0.5
    out /= total
    lo, hi = out.min(), out.max()
    return (out - lo) / (hi - lo) if hi > lo else np.zeros(shape)


def _sample_periodic(tex: np.ndarray, ys: np.ndarray, xs: np.ndarray, smooth: bool = False) -> np.ndarray:
    """Bilinear (optionally smoothstep-weighted) lookup with wrap-around."""
    h, w = tex.shape[:2]
    y0 = np.floor(ys)
    x0 = np.floor(xs)
    fy = ys - y0
    fx = xs - x0
    if smooth:
        fy = fy * fy * (3 - 2 * fy)
        fx = fx * fx * (3 - 2 * fx)
    y0 = y0.astype(np.intp) % h
    x0 = x0.astype(np.intp) % w
    y1 = (y0 + 1) % h
    x1 = (x0 + 1) % w
    if tex.ndim == 3:
        fy = fy[..., None]
        fx = fx[..., None]
    top = tex[y0, x0] + fx * (tex[y0, x1] - tex[y0, x0])
    bottom = tex[y1, x0] + fx * (tex[y1, x1] - tex[y1, x0])
    return top + fy * (bottom - top)


def _colorize(gray: np.ndarray, rng: np.random.Generator, contrast: float) -> np.ndarray:
    base = rng.uniform(60, 190, size=3)
    tint = rng.uniform(0.6, 1.0, size=3)
    return base + contrast * (gray[..., None] - 0.5) * tint * 2


def _foreground_program(motion: int, h: int, w: int, speed: float, rng: np.random.Generator):
    """Return ``frame(t) -> (mask, ty, tx)``: the foreground mask at time ``t``
    and the foreground-texture coordinates of every pixel."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    cy, cx = (h - 1) / 2, (w - 1) / 2
    side = 0.45 * min(h, w)
    radius = 0.4 * min(h, w)

    if motion in (RIGHTWARD, LEFTWARD):
        direction = 1.0 if motion == RIGHTWARD else -1.0
        x_start = rng.uniform(0, w)
        y_top = rng.uniform(0.1 * h, h - side - 0.1 * h)

        def frame(t):
            x_left = x_start + direction * speed * t
            dx = (xx - x_left) % w
            mask = (dx < side) & (yy >= y_top) & (yy < y_top + side)
            return mask, yy - y_top, dx

        return frame

    if motion == OSCILLATION:
        period = 36.0
        amplitude = speed * period / (2 * math.pi)
        x_left = rng.uniform(0.1 * w, w - side - 0.1 * w)
        phase = rng.uniform(0, 2 * math.pi)
        y_mid = cy - side / 2

        def frame(t):
            y_top = y_mid + amplitude * math.sin(2 * math.pi * t / period + phase)
            mask = (xx >= x_left) & (xx < x_left + side) & (yy >= y_top) & (yy < y_top + side)
            return mask, yy - y_top, xx - x_left

        return frame

    ry, rx = yy - cy, xx - cx
    r = np.hypot(ry, rx)
    disk = r < radius

    if motion == CLOCKWISE:
        omega = speed / radius
        theta0 = rng.uniform(0, 2 * math.pi)

        def frame(t):
            # on-screen clockwise (y down): content angle grows with t; sample at angle - theta
            theta = theta0 + omega * t
            c, s = math.cos(theta), math.sin(theta)
            ty = c * ry - s * rx
            tx = s * ry + c * rx
            return disk, ty + radius, tx + radius

        return frame

    if motion == EXPANSION:
        angle = np.arctan2(ry, rx)
        circumference = 2 * math.pi * radius
        r0 = rng.uniform(0, 100)

        def frame(t):
            # rings travel outward at `speed` px/frame
            return disk, r - speed * t + r0, (angle / (2 * math.pi)) * circumference

        return frame

    raise ValueError(f"unknown motion program {motion}")


def generate_clip(label: int, spec: SynthSpec, clip_seed: int) -> tuple[FrameSequence, int, str]:
    """Render one clip. Returns ``(frames, label, motion_name)``.

    For the identification task ``label`` is 1 (motion drawn from the five
    programs) or 0 (static scene); for classification it is the motion id.
    """
    seq, label, motion, _ = render_clip(label, spec, clip_seed)
    return seq, label, motion


def render_clip(label: int, spec: SynthSpec, clip_seed: int):
    """As :func:`generate_clip`, also returning the per-frame foreground masks ``[T, H, W]``."""
    rng = np.random.default_rng(clip_seed)
    h, w = spec.resolution
    lo, hi = spec.duration_range
    duration = rng.uniform(lo, hi)
    n_frames = max(int(round(duration * spec.fps)), 1)

    if spec.task == "identification":
        motion = int(rng.integers(0, 5)) if label == 1 else NEGATIVE
    else:
        motion = label
    speed = rng.uniform(*spec.speed_range)

    scale = min(h, w)
    background = _colorize(value_noise((h, w), scale / 6, rng), rng, contrast=90)
    fg_size = int(2 * max(h, w))
    fg_texture = _colorize(value_noise((fg_size, fg_size), max(scale / 20, 4.0), rng), rng, contrast=200)

    program = _foreground_program(motion, h, w, speed, rng) if motion != NEGATIVE else None
    speed_wobble = rng.uniform(-1, 1, size=n_frames) * spec.speed_jitter
    frames = np.empty((n_frames, h, w, 3), dtype=np.uint8)
    masks = np.zeros((n_frames, h, w), dtype=bool)
    distractor = None
    if spec.distractor_amplitude > 0:
        distractor = _colorize(value_noise((h, w), scale / 8, rng), rng, contrast=60)
    clock = np.cumsum(1.0 + speed_wobble) - 1.0 - speed_wobble[0]
    for i in range(n_frames):
        img = background.copy()
        if distractor is not None:
            shift = spec.distractor_amplitude * math.sin(2 * math.pi * i / 45.0)
            ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
            moving = _sample_periodic(distractor, ys, xs - shift)
            img = 0.8 * img + 0.2 * moving
        if program is not None:
            mask, ty, tx = program(clock[i])
            tex = _sample_periodic(fg_texture, ty, tx)
            img = np.where(mask[..., None], tex, img)
            masks[i] = mask
        img = img + rng.normal(0.0, spec.noise_sigma, size=img.shape)
        frames[i] = np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8)
    return FrameSequence(frames, spec.fps, f"clip_{clip_seed}"), label, MOTION_NAMES[motion], masks


def clip_seeds(spec: SynthSpec, n: int) -> list[int]:
    seeds = [int(np.random.SeedSequence([spec.seed, i]).generate_state(1, np.uint32)[0]) for i in range(n)]
    if len(set(seeds)) != n:
        raise RuntimeError("clip seed collision; choose another corpus seed")
    return seeds


def plan_corpus(spec: SynthSpec) -> list[tuple[int, int]]:
    """``(label, clip_seed)`` for every clip, in manifest order."""
    labels: list[int] = []
    counts = spec.class_counts()
    order = [1, 0] if spec.task == "identification" else list(range(5))
    for label in order:
        labels.extend([label] * counts[label])
    return list(zip(labels, clip_seeds(spec, len(labels))))


def generate_corpus(spec: SynthSpec, out_dir) -> Manifest:
    """Write every clip as GFVS plus ``manifest.csv``; returns the manifest."""
    out_dir = Path(out_dir)
    try:
        (out_dir / "clips").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create corpus directory {out_dir}: {exc}") from exc
    manifest = Manifest(spec.task, root=out_dir)
    for i, (label, seed) in enumerate(plan_corpus(spec)):
        seq, label, motion = generate_clip(label, spec, seed)
        rel = f"clips/clip_{i:05d}.gfvs"
        write_gfvs(seq, out_dir / rel)
        manifest.records.append(ClipRecord(rel, label, seq.duration, seed, motion))
    manifest.write(out_dir / "manifest.csv")
    return manifest


def load_clip(manifest: Manifest, record: ClipRecord) -> FrameSequence:
    return decode_sequence(manifest.clip_path(record))


# -- block-matching oracle ---------------------------------------------------


def block_match(prev: np.ndarray, nxt: np.ndarray, block: int = 8, radius: int = 3) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exhaustive integer block matching of grayscale frames.

    Returns ``(centers [B,2], displacement [B,2] as (dx, dy), residual [B])`` for
    every full block whose search window stays inside the frame. Ties prefer
    the smallest displacement.
    """
    prev = np.asarray(prev, dtype=np.float64)
    nxt = np.asarray(nxt, dtype=np.float64)
    h, w = prev.shape
    offsets = sorted(
        ((dx, dy) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)),
        key=lambda d: (d[0] ** 2 + d[1] ** 2, d[1], d[0]),
    )
    tops = np.arange(radius, h - block - radius + 1, block)
    lefts = np.arange(radius, w - block - radius + 1, block)
    centers, disps, resid = [], [], []
    for top in tops:
        for left in lefts:
            ref = prev[top : top + block, left : left + block]
            best, best_d = np.inf, (0, 0)
            for dx, dy in offsets:
                cand = nxt[top + dy : top + dy + block, left + dx : left + dx + block]
                ssd = float(((cand - ref) ** 2).sum())
                if ssd < best - 1e-9:
                    best, best_d = ssd, (dx, dy)
            centers.append((left + block / 2, top + block / 2))
            disps.append(best_d)
            resid.append(best)
    return np.array(centers), np.array(disps, dtype=np.float64), np.array(resid)


def motion_statistics(seq: FrameSequence, n_pairs: int = 8, block: int = 8, radius: int = 4) -> dict[str, float]:
    """Block-matching flow statistics over evenly spaced consecutive-frame pairs."""
    from .flow import to_gray

    gray = to_gray(seq.frames)
    h, w = gray.shape[1:]
    cy, cx = (h - 1) / 2, (w - 1) / 2
    picks = np.linspace(0, len(seq) - 2, num=min(n_pairs, len(seq) - 1)).round().astype(int)
    moving_frac, mean_u, mean_v, curl, div = [], [], [], [], []
    for i in picks:
        centers, d, best = block_match(gray[i], gray[i + 1], block, radius)
        tops = (centers[:, 1] - block / 2).astype(int)
        lefts = (centers[:, 0] - block / 2).astype(int)
        still = np.array(
            [((gray[i + 1, t : t + block, l : l + block] - gray[i, t : t + block, l : l + block]) ** 2).sum() for t, l in zip(tops, lefts)]
        )
        # a displaced match must clearly beat staying put; on flat, noisy
        # patches the two residuals are nearly equal
        moving = (np.hypot(d[:, 0], d[:, 1]) > 0) & (still > 2 * best)
        moving_frac.append(moving.mean())
        if moving.sum() == 0:
            continue
        c = centers[moving] - (cx, cy)
        dm = d[moving]
        mean_u.append(dm[:, 0].mean())
        mean_v.append(dm[:, 1].mean())
        r = np.hypot(c[:, 0], c[:, 1]) + 1e-9
        # tangential (clockwise on screen, y down) and radial components
        curl.append(((c[:, 0] * dm[:, 1] - c[:, 1] * dm[:, 0]) / r).mean())
        div.append(((c[:, 0] * dm[:, 0] + c[:, 1] * dm[:, 1]) / r).mean())
    stats = {
        "moving_fraction": float(np.median(moving_frac)),
        "mean_u": float(np.mean(mean_u)) if mean_u else 0.0,
        "mean_v": float(np.mean(mean_v)) if mean_v else 0.0,
        "mean_abs_v": float(np.mean(np.abs(mean_v))) if mean_v else 0.0,
        "curl": float(np.mean(curl)) if curl else 0.0,
        "divergence": float(np.mean(div)) if div else 0.0,
    }
    return stats


def rule_classify(stats: dict[str, float], task: str) -> int:
    """Hand-coded label from block-matching statistics (no learning)."""
    moving = stats["moving_fraction"] > 0.05
    if task == "identification":
        return int(moving)
    scores = {
        RIGHTWARD: stats["mean_u"],
        LEFTWARD: -stats["mean_u"],
        CLOCKWISE: stats["curl"],
        EXPANSION: stats["divergence"],
        OSCILLATION: stats["mean_abs_v"],
    }
    return max(scores, key=lambda k: (scores[k], -k))
