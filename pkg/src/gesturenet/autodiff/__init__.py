"""Minimal numpy tensor engine: forward ops, reverse-mode gradients, Adam."""

from .gradcheck import GradCheckReport, grad_check, relative_error
from .ops import (
    ShapeError,
    concat,
    conv2d,
    global_avg_pool,
    linear,
    maxpool2d,
    mean,
    pointwise_and_pool,
    relu,
    sigmoid,
    softmax,
    softmax_cross_entropy,
    split,
    tanh,
)
from .params import ParamStore, adam_step
from .tensor import Tensor

__all__ = [
    "GradCheckReport",
    "ParamStore",
    "ShapeError",
    "Tensor",
    "adam_step",
    "concat",
    "conv2d",
    "global_avg_pool",
    "grad_check",
    "linear",
    "maxpool2d",
    "mean",
    "pointwise_and_pool",
    "relative_error",
    "relu",
    "sigmoid",
    "softmax",
    "softmax_cross_entropy",
    "split",
    "tanh",
]
