"""Clip I/O and the spatial/temporal preprocessing applied to every clip.

Two on-disk forms are understood:

* a directory of ``frame_000001.ppm`` ... (binary P6, maxval 255) next to a
  ``meta.txt`` holding ``fps=<real>`` and ``frames=<int>`` lines;
* a single GFVS container: ``b"GFVS"``, uint32 version, float64 fps,
  uint32 frame count, uint32 H, uint32 W, then the RGB24 frames back to back
  (all little-endian).
"""

from __future__ import annotations

import math
import re
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

GFVS_MAGIC = b"GFVS"
GFVS_VERSION = 1
_GFVS_HEADER = struct.Struct("<4sIdIII")

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

SeedLike = Union[int, np.random.Generator, None]


class VideoFormatError(ValueError):
    pass


@dataclass
class FrameSequence:
    """``frames`` is a uint8 array ``[T, H, W, 3]``."""

    frames: np.ndarray
    fps: float
    source_id: str = ""

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.dtype != np.uint8:
            raise VideoFormatError(f"frames must be uint8, got {self.frames.dtype}")
        if self.frames.ndim != 4 or self.frames.shape[-1] != 3:
            raise VideoFormatError(f"frames must be [T,H,W,3], got shape {self.frames.shape}")
        if not self.fps > 0:
            raise VideoFormatError(f"fps must be positive, got {self.fps}")

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    @property
    def duration(self) -> float:
        return len(self) / self.fps


@dataclass(frozen=True)
class PreprocessConfig:
    resize_to: tuple[int, int] = (240, 240)
    crop_to: tuple[int, int] = (224, 224)
    crop_mode: str = "random"
    temporal_stride: int = 4
    window_seconds: float = 4.0
    mean: tuple[float, float, float] = IMAGENET_MEAN
    std: tuple[float, float, float] = IMAGENET_STD

    def __post_init__(self):
        if self.crop_to[0] > self.resize_to[0] or self.crop_to[1] > self.resize_to[1]:
            raise ValueError(f"crop {self.crop_to} larger than resize target {self.resize_to}")
        if self.temporal_stride < 1:
            raise ValueError("temporal_stride must be >= 1")
        if self.crop_mode not in ("random", "center"):
            raise ValueError(f"crop_mode must be 'random' or 'center', got {self.crop_mode!r}")
        if not self.window_seconds > 0:
            raise ValueError("window_seconds must be positive")


# -- GFVS container -------------------------------------------------------


def encode_gfvs(seq: FrameSequence) -> bytes:
    t, h, w, _ = seq.frames.shape
    header = _GFVS_HEADER.pack(GFVS_MAGIC, GFVS_VERSION, float(seq.fps), t, h, w)
    return header + np.ascontiguousarray(seq.frames).tobytes()


def decode_gfvs(payload: bytes, source_id: str = "") -> FrameSequence:
    if len(payload) < _GFVS_HEADER.size:
        raise VideoFormatError("GFVS payload shorter than its header")
    magic, version, fps, t, h, w = _GFVS_HEADER.unpack_from(payload, 0)
    if magic != GFVS_MAGIC:
        raise VideoFormatError("bad GFVS magic")
    if version != GFVS_VERSION:
        raise VideoFormatError(f"unsupported GFVS version {version}")
    expected = t * h * w * 3
    body = payload[_GFVS_HEADER.size :]
    if len(body) != expected:
        raise VideoFormatError(f"GFVS body holds {len(body)} bytes, header implies {expected}")
    frames = np.frombuffer(body, dtype=np.uint8).reshape(t, h, w, 3).copy()
    return FrameSequence(frames, fps, source_id)


def write_gfvs(seq: FrameSequence, path) -> None:
    Path(path).write_bytes(encode_gfvs(seq))


# -- PPM frame directories -------------------------------------------------

_PPM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    pos = 0
    tokens = []
    for _ in range(4):
        m = _PPM_TOKEN.match(data, pos)
        if m is None:
            raise VideoFormatError(f"{path}: truncated PPM header")
        tokens.append(m.group(1))
        pos = m.end()
    if tokens[0] != b"P6":
        raise VideoFormatError(f"{path}: not a binary P6 image")
    w, h, maxval = (int(tok) for tok in tokens[1:])
    if maxval != 255:
        raise VideoFormatError(f"{path}: maxval {maxval} unsupported (need 255)")
    pos += 1  # single whitespace byte after maxval
    body = data[pos : pos + w * h * 3]
    if len(body) != w * h * 3:
        raise VideoFormatError(f"{path}: pixel data truncated")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3).copy()


def write_ppm(image: np.ndarray, path) -> None:
    h, w, _ = image.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(image, dtype=np.uint8).tobytes())


def write_frame_dir(seq: FrameSequence, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(seq.frames, start=1):
        write_ppm(frame, directory / f"frame_{i:06d}.ppm")
    (directory / "meta.txt").write_text(f"fps={seq.fps!r}\nframes={len(seq)}\n")


def _read_meta(path: Path) -> dict[str, str]:
    meta = {}
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise VideoFormatError(f"{path}: malformed line {line!r}")
        meta[key.strip()] = value.strip()
    return meta


def read_frame_dir(directory) -> FrameSequence:
    directory = Path(directory)
    meta_path = directory / "meta.txt"
    if not meta_path.is_file():
        raise VideoFormatError(f"{directory}: missing meta.txt")
    meta = _read_meta(meta_path)
    if "fps" not in meta:
        raise VideoFormatError(f"{meta_path}: no fps entry")
    paths = sorted(directory.glob("frame_*.ppm"))
    if not paths:
        raise VideoFormatError(f"{directory}: no frame_*.ppm files")
    if "frames" in meta and int(meta["frames"]) != len(paths):
        raise VideoFormatError(f"{meta_path}: frames={meta['frames']} but {len(paths)} files present")
    frames = [read_ppm(paths[0])]
    for p in paths[1:]:
        img = read_ppm(p)
        if img.shape != frames[0].shape:
            raise VideoFormatError(
                f"{p.name}: dimensions {img.shape[1]}x{img.shape[0]} differ from "
                f"{frames[0].shape[1]}x{frames[0].shape[0]} of {paths[0].name}"
            )
        frames.append(img)
    return FrameSequence(np.stack(frames), float(meta["fps"]), directory.name)


def decode_sequence(path) -> FrameSequence:
    """Load a clip from a frame directory or a GFVS file."""
    path = Path(path)
    if path.is_dir():
        return read_frame_dir(path)
    if not path.is_file():
        raise FileNotFoundError(path)
    return decode_gfvs(path.read_bytes(), path.stem)


# -- spatial preprocessing ------------------------------------------------


def _resize_axis(arr: np.ndarray, n_out: int, axis: int) -> np.ndarray:
    n_in = arr.shape[axis]
    if n_in == n_out:
        return arr
    # pixel-centre alignment: output sample i sits at input coordinate (i+0.5)*n_in/n_out - 0.5
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0, n_in - 1)
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    a = np.take(arr, lo, axis=axis)
    b = np.take(arr, hi, axis=axis)
    shape = [1] * arr.ndim
    shape[axis] = n_out
    return a + frac.reshape(shape) * (b - a)


def resize_bilinear(images: np.ndarray, size: tuple[int, int], spatial_axes: tuple[int, int] = (-3, -2)) -> np.ndarray:
    """Bilinear resize to ``size=(H, W)``; returns float64."""
    out = np.asarray(images, dtype=np.float64)
    out = _resize_axis(out, size[0], spatial_axes[0] % out.ndim)
    out = _resize_axis(out, size[1], spatial_axes[1] % out.ndim)
    return out


def crop_offset(resized: tuple[int, int], crop: tuple[int, int], mode: str, rng: SeedLike = None) -> tuple[int, int]:
    dy, dx = resized[0] - crop[0], resized[1] - crop[1]
    if mode == "center":
        return dy // 2, dx // 2
    gen = np.random.default_rng(rng)
    return int(gen.integers(0, dy + 1)), int(gen.integers(0, dx + 1))


def standardize(images: np.ndarray, mean=IMAGENET_MEAN, std=IMAGENET_STD) -> np.ndarray:
    """``[..., H, W, 3]`` values in [0, 255] -> channel-first float32 ``[..., 3, H, W]``."""
    scaled = (np.asarray(images, dtype=np.float64) / 255.0 - np.asarray(mean)) / np.asarray(std)
    return np.moveaxis(scaled, -1, -3).astype(np.float32)


def resize_and_crop(frames: np.ndarray, cfg: PreprocessConfig, offset: tuple[int, int]) -> np.ndarray:
    resized = resize_bilinear(frames, cfg.resize_to)
    oy, ox = offset
    return resized[..., oy : oy + cfg.crop_to[0], ox : ox + cfg.crop_to[1], :]


def preprocess_spatial(seq: FrameSequence, cfg: PreprocessConfig, rng: SeedLike = None) -> np.ndarray:
    """Resize, crop (one offset for the whole clip) and standard-scale to ``[T, 3, h, w]``."""
    if len(seq) == 0:
        raise VideoFormatError("cannot preprocess an empty sequence")
    if seq.height < 2 or seq.width < 2:
        raise VideoFormatError(f"frames must be at least 2x2, got {seq.height}x{seq.width}")
    offset = crop_offset(cfg.resize_to, cfg.crop_to, cfg.crop_mode, rng)
    return standardize(resize_and_crop(seq.frames, cfg, offset), cfg.mean, cfg.std)


# -- temporal sampling ------------------------------------------------------


def window_frames(fps: float, cfg: PreprocessConfig) -> int:
    return int(round(cfg.window_seconds * fps))


def temporal_indices(n_frames: int, fps: float, cfg: PreprocessConfig, mode: str, rng: SeedLike = None) -> np.ndarray:
    """Frame indices kept by window sampling followed by stride decimation."""
    if n_frames <= 0:
        raise VideoFormatError("cannot sample an empty sequence")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    span = window_frames(fps, cfg)
    start, length = 0, n_frames
    if n_frames / fps > cfg.window_seconds and n_frames > span:
        length = span
        if mode == "train":
            start = int(np.random.default_rng(rng).integers(0, n_frames - span + 1))
        else:
            start = (n_frames - span) // 2
    return np.arange(start, start + length, cfg.temporal_stride)


def sample_temporal(seq: FrameSequence, cfg: PreprocessConfig, mode: str = "train", rng: SeedLike = None) -> FrameSequence:
    idx = temporal_indices(len(seq), seq.fps, cfg, mode, rng)
    return FrameSequence(seq.frames[idx], seq.fps / cfg.temporal_stride, seq.source_id)


def decimated_count(n: int, stride: int) -> int:
    return math.ceil(n / stride)
