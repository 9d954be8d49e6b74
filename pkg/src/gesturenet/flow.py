"""Horn-Schunck optical flow (coarse-to-fine with warping) and HSV flow encoding.

All solver routines broadcast over leading axes, so a whole stack of frame
pairs ``[P, H, W]`` is solved in one call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .video import resize_bilinear

LUMA = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class FlowConfig:
    alpha: float = 0.2
    iterations: int = 100
    pyramid_levels: int = 3
    encode_max_magnitude: float = 8.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.pyramid_levels < 1:
            raise ValueError("pyramid_levels must be >= 1")
        if not self.encode_max_magnitude > 0:
            raise ValueError("encode_max_magnitude must be positive")


@dataclass
class FlowField:
    """``u`` rightward and ``v`` downward displacement, pixels per frame."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        if self.u.shape != self.v.shape:
            raise ValueError(f"u shape {self.u.shape} != v shape {self.v.shape}")

    @property
    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u, self.v)


def to_gray(rgb: np.ndarray, scale: float = 255.0) -> np.ndarray:
    """``[..., 3]`` RGB in [0, scale] -> luma in [0, 1]."""
    rgb = np.asarray(rgb, dtype=np.float64)
    return (rgb[..., 0] * LUMA[0] + rgb[..., 1] * LUMA[1] + rgb[..., 2] * LUMA[2]) / scale


def _pad_edge(a: np.ndarray) -> np.ndarray:
    width = [(0, 0)] * (a.ndim - 2) + [(1, 1), (1, 1)]
    return np.pad(a, width, mode="edge")


def _pair_sum(a: np.ndarray, axis: int) -> np.ndarray:
    """``a[i-1] + a[i+1]`` along ``axis`` with edge replication (no padded copy)."""
    n = a.shape[axis]
    if n < 2:
        return a + a
    out = np.empty_like(a)

    def sl(lo, hi):
        idx = [slice(None)] * a.ndim
        idx[axis] = slice(lo, hi)
        return tuple(idx)

    np.add(a[sl(None, -2)], a[sl(2, None)], out=out[sl(1, -1)])
    np.add(a[sl(0, 1)], a[sl(1, 2)], out=out[sl(0, 1)])
    np.add(a[sl(-2, -1)], a[sl(-1, None)], out=out[sl(-1, None)])
    return out


def _neighbor_mean(a: np.ndarray) -> np.ndarray:
    return (_pair_sum(a, a.ndim - 1) + _pair_sum(a, a.ndim - 2)) / 4


def _central_dx(a: np.ndarray) -> np.ndarray:
    p = _pad_edge(a)
    return (p[..., 1:-1, 2:] - p[..., 1:-1, :-2]) / 2


def _central_dy(a: np.ndarray) -> np.ndarray:
    p = _pad_edge(a)
    return (p[..., 2:, 1:-1] - p[..., :-2, 1:-1]) / 2


def warp(image: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Sample ``image`` at ``(x + u, y + v)`` bilinearly, clamping at the border."""
    h, w = image.shape[-2:]
    ys = np.arange(h, dtype=np.float64)[:, None] + v
    xs = np.arange(w, dtype=np.float64)[None, :] + u
    ys = np.clip(ys, 0, h - 1)
    xs = np.clip(xs, 0, w - 1)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = ys - y0
    fx = xs - x0
    lead = np.indices(image.shape[:-2], sparse=True) if image.ndim > 2 else ()
    lead = tuple(ix[..., None, None] for ix in lead)

    def at(yy, xx):
        return image[lead + (yy, xx)]

    top = at(y0, x0) + fx * (at(y0, x1) - at(y0, x0))
    bottom = at(y1, x0) + fx * (at(y1, x1) - at(y1, x0))
    return top + fy * (bottom - top)


def _horn_schunck_level(prev, nxt, u0, v0, alpha: float, iterations: int):
    warped = warp(nxt, u0, v0)
    ix = (_central_dx(prev) + _central_dx(warped)) / 2
    iy = (_central_dy(prev) + _central_dy(warped)) / 2
    # linearised about (u0, v0): ix*(u-u0) + iy*(v-v0) + it = 0
    it = (warped - prev) - ix * u0 - iy * v0
    denom = alpha * alpha + ix * ix + iy * iy
    u, v = u0, v0
    for _ in range(iterations):
        ubar = _neighbor_mean(u)
        vbar = _neighbor_mean(v)
        resid = (ix * ubar + iy * vbar + it) / denom
        u = ubar - ix * resid
        v = vbar - iy * resid
    return u, v


def _pyramid(image: np.ndarray, levels: int) -> list[np.ndarray]:
    out = [image]
    for _ in range(levels - 1):
        h, w = out[-1].shape[-2:]
        if h < 4 or w < 4:
            break
        out.append(resize_bilinear(out[-1], ((h + 1) // 2, (w + 1) // 2), spatial_axes=(-2, -1)))
    return out


def estimate_flow(prev: np.ndarray, nxt: np.ndarray, cfg: FlowConfig = FlowConfig()) -> FlowField:
    """Flow from ``prev`` to ``nxt`` (grayscale in [0, 1], any leading batch axes)."""
    prev = np.asarray(prev, dtype=np.float64)
    nxt = np.asarray(nxt, dtype=np.float64)
    if prev.shape != nxt.shape:
        raise ValueError(f"frame dimensions differ: {prev.shape} vs {nxt.shape}")
    if prev.ndim < 2:
        raise ValueError("frames must be at least 2-D")
    pyr_prev = _pyramid(prev, cfg.pyramid_levels)
    pyr_next = _pyramid(nxt, cfg.pyramid_levels)
    u = np.zeros_like(pyr_prev[-1])
    v = np.zeros_like(pyr_prev[-1])
    for level in range(len(pyr_prev) - 1, -1, -1):
        p, n = pyr_prev[level], pyr_next[level]
        if u.shape != p.shape:
            (hc, wc), (hf, wf) = u.shape[-2:], p.shape[-2:]
            u = resize_bilinear(u, (hf, wf), spatial_axes=(-2, -1)) * (wf / wc)
            v = resize_bilinear(v, (hf, wf), spatial_axes=(-2, -1)) * (hf / hc)
        u, v = _horn_schunck_level(p, n, u, v, cfg.alpha, cfg.iterations)
    return FlowField(u, v)


def hsv_to_rgb(hue_deg: np.ndarray, sat: np.ndarray, val: np.ndarray) -> np.ndarray:
    """Sextant HSV -> RGB in [0, 1]; returns ``[..., 3]``."""
    hue_deg = np.asarray(hue_deg, dtype=np.float64)
    sat = np.asarray(sat, dtype=np.float64)
    val = np.broadcast_to(np.asarray(val, dtype=np.float64), hue_deg.shape)
    chroma = val * sat
    hp = (hue_deg % 360.0) / 60.0
    x = chroma * (1 - np.abs(hp % 2 - 1))
    zero = np.zeros_like(chroma)
    sextant = np.floor(hp).astype(int) % 6
    r = np.choose(sextant, [chroma, x, zero, zero, x, chroma])
    g = np.choose(sextant, [x, chroma, chroma, x, zero, zero])
    b = np.choose(sextant, [zero, zero, x, chroma, chroma, x])
    m = val - chroma
    return np.stack([r + m, g + m, b + m], axis=-1)


def flow_to_rgb(flow: FlowField, max_mag: float) -> np.ndarray:
    """Hue = direction, saturation = magnitude / ``max_mag`` (capped at 1), value = 1."""
    if not max_mag > 0:
        raise ValueError("max_mag must be positive")
    hue = np.degrees(np.arctan2(flow.v, flow.u)) % 360.0
    sat = np.minimum(flow.magnitude / max_mag, 1.0)
    rgb = hsv_to_rgb(hue, sat, 1.0)
    return np.floor(rgb * 255.0 + 0.5).astype(np.uint8)


def encode_sequence_flow(frames: np.ndarray, cfg: FlowConfig = FlowConfig(), scale: float = 255.0) -> np.ndarray:
    """``[T, H, W, 3]`` frames -> ``[T, H, W, 3]`` uint8 flow images.

    Flow ``t`` is from frame ``t`` to ``t+1``; the last one is repeated so both
    streams keep length ``T``. A single frame yields one zero-flow (white) image.
    """
    frames = np.asarray(frames)
    gray = to_gray(frames, scale)
    t = gray.shape[0]
    if t < 2:
        return np.full(frames.shape[:3] + (3,), 255, dtype=np.uint8)
    field = estimate_flow(gray[:-1], gray[1:], cfg)
    encoded = flow_to_rgb(field, cfg.encode_max_magnitude)
    return np.concatenate([encoded, encoded[-1:]], axis=0)
