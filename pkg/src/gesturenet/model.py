"""Two-stream extractor + recurrent head.

Per frame, an RGB extractor and a flow extractor (same layout, separate
weights) each produce a ``C x h x w`` map. The maps are concatenated along
channels and fed, in time order, to either

* ``lstm``: global average pool -> linear 2C->128 -> LSTM(64) -> LSTM(128), or
* ``convlstm``: one 3x3 convolutional LSTM with C hidden channels, whose final
  hidden state is globally average pooled,

and the last time step goes through a linear classifier. Gate order in every
recurrent weight is (input, forget, cell, output).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .autodiff import ParamStore, Tensor
from .autodiff import ops

STREAMS = ("rgb", "flow")


class ModelSpecError(ValueError):
    pass


@dataclass(frozen=True)
class ConvLayer:
    out_channels: int
    kernel: int
    stride: int = 1
    pad: int = 0
    pool: Optional[tuple[int, int]] = None  # (k, stride) max pool after the ReLU


@dataclass(frozen=True)
class ExtractorSpec:
    layers: tuple[ConvLayer, ...]
    name: str = "custom"

    @property
    def out_channels(self) -> int:
        return self.layers[-1].out_channels

    def output_shape(self, size: tuple[int, int]) -> tuple[int, int, int]:
        h, w = size
        for layer in self.layers:
            h = ops.conv_output_size(h, layer.kernel, layer.stride, layer.pad)
            w = ops.conv_output_size(w, layer.kernel, layer.stride, layer.pad)
            if h < 1 or w < 1:
                raise ModelSpecError(f"spatial map vanishes at a {layer.kernel}x{layer.kernel} conv")
            if layer.pool:
                k, s = layer.pool
                if k > h or k > w:
                    raise ModelSpecError(f"pool window {k} exceeds {h}x{w} map")
                h, w = (h - k) // s + 1, (w - k) // s + 1
        return self.out_channels, h, w


ALEXNET = ExtractorSpec(
    layers=(
        ConvLayer(64, 11, 4, 2, (3, 2)),
        ConvLayer(192, 5, 1, 2, (3, 2)),
        ConvLayer(384, 3, 1, 1),
        ConvLayer(256, 3, 1, 1),
        ConvLayer(256, 3, 1, 1, (3, 2)),
    ),
    name="alexnet",
)


def small_extractor(channels: tuple[int, ...] = (8, 16, 16), name: str = "small") -> ExtractorSpec:
    """A reduced AlexNet-like stack for desk-scale inputs (e.g. 32x32)."""
    layers = [ConvLayer(channels[0], 5, 2, 2, (2, 2))]
    for c in channels[1:-1]:
        layers.append(ConvLayer(c, 3, 1, 1, (2, 2)))
    if len(channels) > 1:
        layers.append(ConvLayer(channels[-1], 3, 1, 1))
    return ExtractorSpec(tuple(layers), name)


def tiny_extractor(channels: int = 8) -> ExtractorSpec:
    """Two 3x3 convs with one 2x2 pool; used for gradient checks on 16x16 frames."""
    return ExtractorSpec((ConvLayer(channels, 3, 1, 1, (2, 2)), ConvLayer(channels, 3, 1, 1)), "tiny")


EXTRACTORS = {"alexnet": ALEXNET, "small": small_extractor(), "tiny": tiny_extractor()}


@dataclass(frozen=True)
class RecurrentSpec:
    kind: str = "lstm"  # lstm | convlstm | none
    reduction_dim: int = 128
    lstm_widths: tuple[int, ...] = (64, 128)
    conv_kernel: int = 3
    hidden_channels: Optional[int] = None  # convlstm; defaults to the extractor's channels


@dataclass(frozen=True)
class ModelSpec:
    extractor: ExtractorSpec = ALEXNET
    recurrent: RecurrentSpec = field(default_factory=RecurrentSpec)
    n_classes: int = 2
    input_size: tuple[int, int] = (224, 224)
    in_channels: int = 3

    @property
    def hidden_channels(self) -> int:
        return self.recurrent.hidden_channels or self.extractor.out_channels

    def validate(self) -> None:
        if self.n_classes not in (2, 5):
            raise ModelSpecError(f"n_classes must be 2 or 5, got {self.n_classes}")
        if not self.extractor.layers:
            raise ModelSpecError("extractor has no layers")
        self.extractor.output_shape(self.input_size)
        if self.extractor.name == "alexnet" and self.extractor.out_channels != 256:
            raise ModelSpecError("alexnet extractor must end in 256 channels")
        kind = self.recurrent.kind
        if kind not in ("lstm", "convlstm", "none"):
            raise ModelSpecError(f"unknown recurrent kind {kind!r}")
        if kind == "convlstm":
            if self.hidden_channels != self.extractor.out_channels:
                raise ModelSpecError(
                    f"convlstm hidden channels {self.hidden_channels} must equal the extractor's "
                    f"final channels {self.extractor.out_channels}"
                )
            if self.recurrent.conv_kernel % 2 != 1:
                raise ModelSpecError("convlstm kernel must be odd")
        if kind == "lstm" and not self.recurrent.lstm_widths:
            raise ModelSpecError("lstm needs at least one layer width")


@dataclass
class ModelParams:
    spec: ModelSpec
    store: ParamStore


# -- construction -------------------------------------------------------------


def _uniform(rng: np.random.Generator, shape, bound: float, dtype) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def build_model(spec: ModelSpec, seed: Union[int, np.random.Generator] = 0, dtype=np.float32) -> ModelParams:
    """Seeded fan-in-scaled uniform initialisation; forget-gate biases start at 1."""
    spec.validate()
    rng = np.random.default_rng(seed)
    store = ParamStore()

    for stream in STREAMS:
        c_in = spec.in_channels
        for i, layer in enumerate(spec.extractor.layers):
            fan_in = c_in * layer.kernel * layer.kernel
            store.add(
                f"{stream}.conv{i}.weight",
                _uniform(rng, (layer.out_channels, c_in, layer.kernel, layer.kernel), math.sqrt(6 / fan_in), dtype),
            )
            store.add(f"{stream}.conv{i}.bias", np.zeros(layer.out_channels, dtype))
            c_in = layer.out_channels

    fused = 2 * spec.extractor.out_channels
    rec = spec.recurrent
    if rec.kind == "lstm":
        store.add("rnn.reduce.weight", _uniform(rng, (rec.reduction_dim, fused), 1 / math.sqrt(fused), dtype))
        store.add("rnn.reduce.bias", np.zeros(rec.reduction_dim, dtype))
        n_in = rec.reduction_dim
        for i, width in enumerate(rec.lstm_widths):
            bound = 1 / math.sqrt(width)
            store.add(f"rnn.lstm{i}.weight", _uniform(rng, (4 * width, n_in + width), bound, dtype))
            bias = np.zeros(4 * width, dtype)
            bias[width : 2 * width] = 1.0
            store.add(f"rnn.lstm{i}.bias", bias)
            n_in = width
        head_in = rec.lstm_widths[-1]
    elif rec.kind == "convlstm":
        hidden = spec.hidden_channels
        k = rec.conv_kernel
        fan_in = (fused + hidden) * k * k
        store.add("rnn.convlstm.weight", _uniform(rng, (4 * hidden, fused + hidden, k, k), 1 / math.sqrt(fan_in), dtype))
        bias = np.zeros(4 * hidden, dtype)
        bias[hidden : 2 * hidden] = 1.0
        store.add("rnn.convlstm.bias", bias)
        head_in = hidden
    else:
        head_in = fused

    store.add("head.weight", _uniform(rng, (spec.n_classes, head_in), 1 / math.sqrt(head_in), dtype))
    store.add("head.bias", np.zeros(spec.n_classes, dtype))
    return ModelParams(spec, store)


# -- forward -------------------------------------------------------------------


def _as_input(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def extract_features(params: ModelParams, stream: str, frames) -> Tensor:
    """Run one stream's extractor on ``[T, 3, H, W]`` -> ``[T, C, h, w]``."""
    if stream not in STREAMS:
        raise ValueError(f"unknown stream {stream!r}")
    x = _as_input(frames)
    store = params.store
    for i, layer in enumerate(params.spec.extractor.layers):
        x = ops.conv2d(x, store[f"{stream}.conv{i}.weight"], store[f"{stream}.conv{i}.bias"], layer.stride, layer.pad)
        x = ops.relu(x)
        if layer.pool:
            x = ops.maxpool2d(x, *layer.pool)
    return x


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, weight: Tensor, bias: Tensor) -> tuple[Tensor, Tensor]:
    z = ops.linear(ops.concat([x, h], axis=0), weight, bias)
    i, f, g, o = ops.split(z, 4, axis=0)
    c = ops.sigmoid(f) * c + ops.sigmoid(i) * ops.tanh(g)
    h = ops.sigmoid(o) * ops.tanh(c)
    return h, c


def convlstm_cell(x: Tensor, h: Tensor, c: Tensor, weight: Tensor, bias: Tensor) -> tuple[Tensor, Tensor]:
    pad = weight.shape[-1] // 2
    z = ops.conv2d(ops.concat([x, h], axis=0), weight, bias, 1, pad)
    i, f, g, o = ops.split(z, 4, axis=0)
    c = ops.sigmoid(f) * c + ops.sigmoid(i) * ops.tanh(g)
    h = ops.sigmoid(o) * ops.tanh(c)
    return h, c


def recurrent_features(params: ModelParams, fused: Tensor) -> Tensor:
    """``[T, 2C, h, w]`` fused maps -> the last step's representation vector."""
    spec = params.spec
    store = params.store
    steps = fused.shape[0]
    dtype = fused.dtype
    rec = spec.recurrent

    if rec.kind == "lstm":
        seq = ops.linear(ops.global_avg_pool(fused), store["rnn.reduce.weight"], store["rnn.reduce.bias"])
        inputs = [seq[t] for t in range(steps)]
        for i, width in enumerate(rec.lstm_widths):
            h = Tensor(np.zeros(width, dtype))
            c = Tensor(np.zeros(width, dtype))
            outputs = []
            for x in inputs:
                h, c = lstm_cell(x, h, c, store[f"rnn.lstm{i}.weight"], store[f"rnn.lstm{i}.bias"])
                outputs.append(h)
            inputs = outputs
        return inputs[-1]

    if rec.kind == "convlstm":
        hidden = spec.hidden_channels
        shape = (hidden,) + tuple(fused.shape[2:])
        h = Tensor(np.zeros(shape, dtype))
        c = Tensor(np.zeros(shape, dtype))
        for t in range(steps):
            h, c = convlstm_cell(fused[t], h, c, store["rnn.convlstm.weight"], store["rnn.convlstm.bias"])
        return ops.global_avg_pool(h)

    return ops.global_avg_pool(fused[steps - 1])


def forward_clip(params: ModelParams, rgb, flow_rgb) -> Tensor:
    """Logits ``[n_classes]`` for one clip given both ``[T, 3, H, W]`` streams."""
    rgb = _as_input(rgb)
    flow_rgb = _as_input(flow_rgb)
    if rgb.ndim != 4 or flow_rgb.ndim != 4:
        raise ValueError("stream inputs must be [T, 3, H, W]")
    if rgb.shape[0] != flow_rgb.shape[0]:
        raise ValueError(f"stream lengths differ: rgb T={rgb.shape[0]}, flow T={flow_rgb.shape[0]}")
    if rgb.shape[0] < 1:
        raise ValueError("clip has no frames")
    fused = ops.concat([extract_features(params, "rgb", rgb), extract_features(params, "flow", flow_rgb)], axis=1)
    rep = recurrent_features(params, fused)
    return ops.linear(rep, params.store["head.weight"], params.store["head.bias"])


def predict_proba(params: ModelParams, rgb, flow_rgb) -> np.ndarray:
    return ops.softmax(forward_clip(params, rgb, flow_rgb).data.astype(np.float64))


# -- accounting ----------------------------------------------------------------


def count_parameters(params: ModelParams) -> dict[str, int]:
    store = params.store
    report = {
        "rgb_extractor": store.count("rgb."),
        "flow_extractor": store.count("flow."),
        "recurrent": store.count("rnn."),
        "head": store.count("head."),
    }
    report["per_extractor"] = report["rgb_extractor"]
    report["total"] = report["rgb_extractor"] + report["flow_extractor"] + report["recurrent"] + report["head"]
    for i, _ in enumerate(params.spec.recurrent.lstm_widths if params.spec.recurrent.kind == "lstm" else ()):
        report[f"lstm_layer{i}"] = store.count(f"rnn.lstm{i}.")
    return report


def layer_parameter_formula(spec: ExtractorSpec, in_channels: int = 3) -> int:
    """Closed-form sum over conv layers of k^2 * C_in * C_out + C_out."""
    total, c_in = 0, in_channels
    for layer in spec.layers:
        total += layer.kernel**2 * c_in * layer.out_channels + layer.out_channels
        c_in = layer.out_channels
    return total
