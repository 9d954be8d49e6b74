"""Forward operators with registered backward rules.

Image operators accept either a single map ``[C, H, W]`` or a batch
``[N, C, H, W]``; batching is how a clip's frames go through an extractor in
one call.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, make_node


class ShapeError(ValueError):
    """Operand shapes are incompatible; the message names the dimension."""


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- elementwise arithmetic ----------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data
    return make_node(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data
    return make_node(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_node(out, (a, b), backward)


# -- shape plumbing -------------------------------------------------------


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    out = x.data.reshape(shape)
    return make_node(out, (x,), lambda g: (g.reshape(x.shape),))


def take(x: Tensor, index) -> Tensor:
    """Basic (non-fancy) indexing with a scatter backward."""
    out = x.data[index]

    def backward(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return make_node(np.ascontiguousarray(out), (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors))
        )

    return make_node(out, tensors, backward)


def split(x: Tensor, sections: int, axis: int = 0) -> list[Tensor]:
    """Split into equal chunks along ``axis``."""
    extent = x.shape[axis]
    if extent % sections:
        raise ShapeError(f"axis {axis} of extent {extent} does not split into {sections} chunks")
    step = extent // sections
    parts = []
    for i in range(sections):
        index = [slice(None)] * x.ndim
        index[axis] = slice(i * step, (i + 1) * step)
        parts.append(take(x, tuple(index)))
    return parts


def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum(), dtype=x.dtype)
    return make_node(out, (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def mean(x: Tensor, axis=None) -> Tensor:
    """Mean over ``axis`` (int, tuple or None for all); reduced axes are dropped."""
    out = np.asarray(x.data.mean(axis=axis), dtype=x.dtype)
    if axis is None:
        count = x.data.size
        axes = tuple(range(x.ndim))
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(a % x.ndim for a in axes)
        count = int(np.prod([x.shape[a] for a in axes]))

    def backward(g):
        g = np.expand_dims(g, axes) if axes else g
        return (np.broadcast_to(g / count, x.shape).astype(x.dtype),)

    return make_node(out, (x,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """``[..., C, H, W] -> [..., C]``."""
    return mean(x, axis=(-2, -1))


# -- nonlinearities and pooling ------------------------------------------


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, 0).astype(x.dtype)
    return make_node(out, (x,), lambda g: (g * mask,))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return make_node(out, (x,), lambda g: (g * (1 - out * out),))


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1 / (1 + e), e / (1 + e)).astype(z.dtype)


def sigmoid(x: Tensor) -> Tensor:
    out = _stable_sigmoid(x.data)
    return make_node(out, (x,), lambda g: (g * out * (1 - out),))


def _as_batch(x: Tensor) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x.data[None], True
    if x.ndim == 4:
        return x.data, False
    raise ShapeError(f"expected [C,H,W] or [N,C,H,W], got rank {x.ndim}")


def maxpool2d(x: Tensor, k: int, stride: int) -> Tensor:
    """Max over k x k windows; backward routes to the first maximum (row-major)."""
    xb, single = _as_batch(x)
    n, c, h, w = xb.shape
    if k > h or k > w:
        raise ShapeError(f"pool window {k} exceeds spatial extent {h}x{w}")
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    win = sliding_window_view(xb, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    flat = win.reshape(n, c, ho, wo, k * k)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    rows = np.arange(ho)[:, None] * stride + arg // k
    cols = np.arange(wo)[None, :] * stride + arg % k
    plane = (np.arange(n * c).reshape(n, c, 1, 1)) * (h * w)
    target = (plane + rows * w + cols).reshape(-1)

    def backward(g):
        gb = g[None] if single else g
        dx = np.bincount(target, weights=gb.reshape(-1).astype(np.float64), minlength=n * c * h * w)
        dx = dx.reshape(n, c, h, w).astype(x.dtype)
        return (dx[0] if single else dx,)

    return make_node(out[0] if single else out, (x,), backward)


_POINTWISE = {"relu": relu, "tanh": tanh, "sigmoid": sigmoid}


def pointwise_and_pool(x: Tensor, kind: str, k: int = 2, stride: int = 2) -> Tensor:
    """Dispatch by name: ``relu``, ``tanh``, ``sigmoid`` or ``maxpool``."""
    if kind in _POINTWISE:
        return _POINTWISE[kind](x)
    if kind == "maxpool":
        return maxpool2d(x, k, stride)
    raise ValueError(f"unknown pointwise/pool kind {kind!r}")


# -- dense layers ---------------------------------------------------------


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``x @ weight.T + bias`` for ``x`` of shape ``[n]`` or ``[N, n]``."""
    if weight.ndim != 2:
        raise ShapeError(f"weight must be rank 2, got shape {weight.shape}")
    m, n = weight.shape
    if x.shape[-1] != n:
        raise ShapeError(f"input dimension {x.shape[-1]} does not match weight in_features {n}")
    if bias.shape != (m,):
        raise ShapeError(f"bias shape {bias.shape} does not match out_features {m}")
    out = x.data @ weight.data.T + bias.data

    def backward(g):
        if x.ndim == 1:
            return g @ weight.data, np.outer(g, x.data), g
        return g @ weight.data, g.T @ x.data, g.sum(axis=0)

    return make_node(out, (x, weight, bias), backward)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of ``[C_in,H,W]`` (or a batch) with ``[C_out,C_in,k,k]``."""
    xb, single = _as_batch(x)
    n, c_in, h, w = xb.shape
    if weight.ndim != 4:
        raise ShapeError(f"weight must be [C_out,C_in,k,k], got shape {weight.shape}")
    c_out, wc_in, k, k2 = weight.shape
    if k != k2:
        raise ShapeError(f"kernel must be square, got {k}x{k2}")
    if wc_in != c_in:
        raise ShapeError(f"input channels C_in={c_in} do not match weight C_in={wc_in}")
    if bias.shape != (c_out,):
        raise ShapeError(f"bias shape {bias.shape} does not match C_out={c_out}")
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    if k > h + 2 * pad:
        raise ShapeError(f"kernel {k} exceeds padded height H={h}+2*{pad}")
    if k > w + 2 * pad:
        raise ShapeError(f"kernel {k} exceeds padded width W={w}+2*{pad}")

    xp = np.pad(xb, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xb
    hp, wp = xp.shape[2:]
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c_in * k * k)
    wmat = weight.data.reshape(c_out, -1)
    out = (cols @ wmat.T + bias.data).reshape(n, ho, wo, c_out).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)

    def backward(g):
        gb = g[None] if single else g
        g2 = gb.transpose(0, 2, 3, 1).reshape(-1, c_out)
        dw = (g2.T @ cols).reshape(weight.shape)
        db = g2.sum(axis=0)
        dcols = (g2 @ wmat).reshape(n, ho, wo, c_in, k, k)
        dxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[
                    :, :, :, :, i, j
                ].transpose(0, 3, 1, 2)
        dx = dxp[:, :, pad : pad + h, pad : pad + w] if pad else dxp
        return (dx[0] if single else dx), dw, db

    return make_node(out[0] if single else out, (x, weight, bias), backward)


def conv_output_size(extent: int, k: int, stride: int, pad: int) -> int:
    return (extent + 2 * pad - k) // stride + 1


# -- loss -----------------------------------------------------------------


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, label: int) -> Tensor:
    """``-log softmax(logits)[label]`` for a single logit vector."""
    if logits.ndim != 1:
        raise ShapeError(f"logits must be a vector, got shape {logits.shape}")
    n_classes = logits.shape[0]
    if not 0 <= int(label) < n_classes:
        raise ValueError(f"label {label} outside [0, {n_classes})")
    z = logits.data - logits.data.max()
    log_norm = np.log(np.exp(z).sum())
    loss = np.asarray(log_norm - z[label], dtype=logits.dtype)
    probs = np.exp(z - log_norm)

    def backward(g):
        grad = probs.copy()
        grad[label] -= 1
        return (grad * g,)

    return make_node(loss, (logits,), backward)
