"""Layer learners as forward transforms over explicit parameter bundles.

Every forward has a ``*_cached`` twin returning what the matching backward
needs.  Convolutions are 3x3, stride 1, zero "same" padding, computed as
cross-correlation (no kernel flip).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from .errors import DimensionError, DomainError
from .tensor import DTYPE, SeededRng, Tensor, glorot_bound, uniform_init

ACTIVATIONS = ("relu", "identity")


@dataclass
class DenseLayer:
    weights: Tensor  # [out, in]
    biases: Tensor  # [out]
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise DomainError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2 or self.biases.shape != (self.weights.shape[0],):
            raise DimensionError(
                f"dense weights {self.weights.shape} and biases {self.biases.shape} disagree")

    @property
    def in_width(self) -> int:
        return self.weights.shape[1]

    @property
    def out_width(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def init(cls, rng: SeededRng, in_width: int, out_width: int, activation: str = "relu"):
        w = uniform_init(rng, (out_width, in_width), glorot_bound(in_width, out_width))
        return cls(w, np.zeros(out_width, dtype=DTYPE), activation)

    def params(self):
        return [self.weights, self.biases]


@dataclass
class ConvLayer:
    filters: Tensor  # [F, C, 3, 3]
    biases: Tensor  # [F]
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise DomainError(f"unknown activation {self.activation!r}")
        if self.filters.ndim != 4 or self.filters.shape[2:] != (3, 3):
            raise DimensionError(f"conv filters must be [F, C, 3, 3], got {self.filters.shape}")
        if self.biases.shape != (self.filters.shape[0],):
            raise DimensionError(
                f"conv filters {self.filters.shape} and biases {self.biases.shape} disagree")

    @property
    def n_filters(self) -> int:
        return self.filters.shape[0]

    @property
    def in_channels(self) -> int:
        return self.filters.shape[1]

    @classmethod
    def init(cls, rng: SeededRng, in_channels: int, n_filters: int):
        fan_in, fan_out = in_channels * 9, n_filters * 9
        f = uniform_init(rng, (n_filters, in_channels, 3, 3), glorot_bound(fan_in, fan_out))
        return cls(f, np.zeros(n_filters, dtype=DTYPE))

    def params(self):
        return [self.filters, self.biases]


@dataclass
class OutputHead:
    weights: Tensor  # [n_classes, in]
    biases: Tensor  # [n_classes]

    def __post_init__(self):
        if self.weights.ndim != 2 or self.biases.shape != (self.weights.shape[0],):
            raise DimensionError(
                f"head weights {self.weights.shape} and biases {self.biases.shape} disagree")

    @property
    def in_width(self) -> int:
        return self.weights.shape[1]

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def init(cls, rng: SeededRng, in_width: int, n_classes: int):
        w = uniform_init(rng, (n_classes, in_width), glorot_bound(in_width, n_classes))
        return cls(w, np.zeros(n_classes, dtype=DTYPE))

    def params(self):
        return [self.weights, self.biases]


@dataclass(frozen=True)
class DropoutSpec:
    rate: float

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise DomainError(f"dropout rate must be in [0, 1), got {self.rate}")


class MaxPool2x2:
    """Marker step for a 2x2, stride-2 max pool inside a layer sequence."""

    def __repr__(self):
        return "MaxPool2x2()"

    def __eq__(self, other):
        return isinstance(other, MaxPool2x2)


class Flatten:
    def __repr__(self):
        return "Flatten()"

    def __eq__(self, other):
        return isinstance(other, Flatten)


def _activate(pre: Tensor, activation: str) -> Tensor:
    return np.maximum(pre, 0.0) if activation == "relu" else pre


# -- dense -----------------------------------------------------------------

def dense_forward_cached(layer: DenseLayer, x: Tensor):
    if x.ndim != 2 or x.shape[1] != layer.in_width:
        raise DimensionError(
            f"dense layer expects [batch, {layer.in_width}] input, got {x.shape}")
    pre = x @ layer.weights.T + layer.biases
    return _activate(pre, layer.activation), (x, pre)


def dense_forward(layer: DenseLayer, x: Tensor) -> Tensor:
    return dense_forward_cached(layer, x)[0]


def dense_backward(layer: DenseLayer, cache, dout: Tensor, need_dx: bool = True):
    x, pre = cache
    dpre = dout * (pre > 0.0) if layer.activation == "relu" else dout
    dw = dpre.T @ x
    db = dpre.sum(axis=0)
    dx = dpre @ layer.weights if need_dx else None
    return dw, db, dx


# -- convolution -----------------------------------------------------------

def conv_forward_cached(layer: ConvLayer, x: Tensor):
    if x.ndim != 4 or x.shape[1] != layer.in_channels:
        raise DimensionError(
            f"conv layer expects [batch, {layer.in_channels}, H, W] input, got {x.shape}")
    n, c, h, w = x.shape
    if h < 1 or w < 1:
        raise DimensionError(f"conv input spatial dims must be positive, got {x.shape}")
    cols = kernels.im2col3(np.ascontiguousarray(x, dtype=DTYPE))
    w2 = layer.filters.reshape(layer.n_filters, c * 9)
    pre = np.matmul(w2, cols) + layer.biases[None, :, None]
    out = _activate(pre, layer.activation).reshape(n, layer.n_filters, h, w)
    return out, (cols, pre, x.shape)


def conv_forward(layer: ConvLayer, x: Tensor) -> Tensor:
    return conv_forward_cached(layer, x)[0]


def conv_backward(layer: ConvLayer, cache, dout: Tensor, need_dx: bool = True):
    cols, pre, (n, c, h, w) = cache
    d = dout.reshape(n, layer.n_filters, h * w)
    dpre = d * (pre > 0.0) if layer.activation == "relu" else d
    dw = np.tensordot(dpre, cols, axes=([0, 2], [0, 2])).reshape(layer.filters.shape)
    db = dpre.sum(axis=(0, 2))
    dx = None
    if need_dx:
        w2 = layer.filters.reshape(layer.n_filters, c * 9)
        dx = kernels.col2im3(np.matmul(w2.T, dpre), c, h, w)
    return dw, db, dx


# -- pooling / dropout -----------------------------------------------------

def maxpool_2x2_cached(x: Tensor):
    if x.ndim != 4 or x.shape[2] < 2 or x.shape[3] < 2:
        raise DimensionError(f"maxpool_2x2 needs [batch, C, H>=2, W>=2], got {x.shape}")
    out, idx = kernels.maxpool2_forward(np.ascontiguousarray(x, dtype=DTYPE))
    return out, (idx, x.shape[2], x.shape[3])


def maxpool_2x2(x: Tensor) -> Tensor:
    """Non-overlapping 2x2 maxima; an odd trailing row or column is dropped."""
    return maxpool_2x2_cached(x)[0]


def maxpool_backward(cache, dout: Tensor) -> Tensor:
    idx, h, w = cache
    return kernels.maxpool2_backward(np.ascontiguousarray(dout, dtype=DTYPE), idx, h, w)


def dropout_forward(x: Tensor, spec: DropoutSpec, rng: Optional[SeededRng], mode: str):
    """Inverted dropout. Returns (output, 0/1 keep mask)."""
    if mode not in ("train", "eval"):
        raise DomainError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" or spec.rate == 0.0:
        return x, np.ones_like(x)
    mask = (rng.random(x.shape) >= spec.rate).astype(DTYPE)
    return x * mask / (1.0 - spec.rate), mask


# -- softmax head ----------------------------------------------------------

def softmax(logits: Tensor) -> Tensor:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_forward(head: OutputHead, x: Tensor) -> Tensor:
    if x.ndim != 2 or x.shape[1] != head.in_width:
        raise DimensionError(
            f"softmax head expects [batch, {head.in_width}] input, got {x.shape}")
    return softmax(x @ head.weights.T + head.biases)


def layer_params(layer) -> list:
    return layer.params() if hasattr(layer, "params") else []
