"""Clip -> (RGB tensor, flow-RGB tensor) for training and evaluation.

Flow is computed between consecutive *sampled* frames on the resized (not yet
cropped) frames and cropped with the same offset as the RGB stream. Encoded
flow images are cached per clip and frame pair, so repeated visits with fresh
random windows only solve the pairs they have not seen before.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .flow import FlowConfig, flow_to_rgb, estimate_flow, to_gray
from .synth import ClipRecord, Manifest
from .video import (
    FrameSequence,
    PreprocessConfig,
    SeedLike,
    crop_offset,
    decode_sequence,
    resize_bilinear,
    standardize,
    temporal_indices,
)


@dataclass
class StreamSample:
    rgb: np.ndarray  # [T, 3, h, w] float32, standard-scaled
    flow: np.ndarray  # [T, 3, h, w] float32, standard-scaled flow-RGB
    indices: np.ndarray  # source frame indices
    offset: tuple[int, int]


class TwoStreamPipeline:
    def __init__(
        self,
        manifest: Manifest,
        preprocess: PreprocessConfig = PreprocessConfig(),
        flow: FlowConfig = FlowConfig(),
        cache_bytes: int = 1 << 30,
    ):
        self.manifest = manifest
        self.preprocess = preprocess
        self.flow = flow
        self.cache_bytes = cache_bytes
        self._cache: dict[tuple[str, int, int], np.ndarray] = {}
        self._cached_bytes = 0
        self.requests: list[str] = []

    def load(self, record: ClipRecord) -> FrameSequence:
        return decode_sequence(self.manifest.clip_path(record))

    def sample(self, record: ClipRecord, mode: str, rng: SeedLike = None) -> StreamSample:
        """Draw a window and crop (``mode='train'``) or take the centred ones (``'eval'``)."""
        self.requests.append(record.path)
        seq = self.load(record)
        return self.sample_sequence(seq, record.path, mode, rng)

    def sample_sequence(self, seq: FrameSequence, key: str, mode: str, rng: SeedLike = None) -> StreamSample:
        cfg = self.preprocess
        gen = np.random.default_rng(rng)
        idx = temporal_indices(len(seq), seq.fps, cfg, mode, gen)
        crop_mode = cfg.crop_mode if mode == "train" else "center"
        offset = crop_offset(cfg.resize_to, cfg.crop_to, crop_mode, gen)
        resized = resize_bilinear(seq.frames[idx], cfg.resize_to)
        flow_full = self._flow_images(key, idx, resized)
        (oy, ox), (ch, cw) = offset, cfg.crop_to
        rgb = standardize(resized[:, oy : oy + ch, ox : ox + cw], cfg.mean, cfg.std)
        flow = standardize(flow_full[:, oy : oy + ch, ox : ox + cw], cfg.mean, cfg.std)
        return StreamSample(rgb, flow, idx, offset)

    def _flow_images(self, key: str, idx: np.ndarray, resized: np.ndarray) -> np.ndarray:
        t = len(idx)
        if t < 2:
            return np.full(resized.shape, 255, dtype=np.uint8)
        pairs = [(int(idx[k]), int(idx[k + 1])) for k in range(t - 1)]
        missing = [k for k, (a, b) in enumerate(pairs) if (key, a, b) not in self._cache]
        encoded: dict[int, np.ndarray] = {}
        if missing:
            gray = to_gray(resized)
            sel = np.array(missing)
            field = estimate_flow(gray[sel], gray[sel + 1], self.flow)
            images = flow_to_rgb(field, self.flow.encode_max_magnitude)
            for j, k in enumerate(missing):
                encoded[k] = images[j]
                self._remember((key,) + pairs[k], images[j])
        out = np.empty(resized.shape, dtype=np.uint8)
        for k, pair in enumerate(pairs):
            out[k] = encoded[k] if k in encoded else self._cache[(key,) + pair]
        out[t - 1] = out[t - 2]
        return out

    def _remember(self, key, image: np.ndarray) -> None:
        if self._cached_bytes + image.nbytes <= self.cache_bytes:
            self._cache[key] = image
            self._cached_bytes += image.nbytes

    def clear_cache(self) -> None:
        self._cache.clear()
        self._cached_bytes = 0


def sample_clip_streams(
    seq: FrameSequence,
    preprocess: PreprocessConfig,
    flow: FlowConfig,
    mode: str = "eval",
    rng: Optional[SeedLike] = None,
) -> StreamSample:
    """Uncached one-off version of :meth:`TwoStreamPipeline.sample_sequence`."""
    pipe = TwoStreamPipeline(Manifest("", []), preprocess, flow, cache_bytes=0)
    return pipe.sample_sequence(seq, seq.source_id, mode, rng)
