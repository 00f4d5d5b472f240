"""Forward and reverse passes over an ordered list of steps ending in a softmax head.

Shared by the shallow per-stage trainer and the end-to-end baseline so both
use identical arithmetic. A step is a ``DenseLayer``, ``ConvLayer``,
``MaxPool2x2``, ``Flatten`` or ``DropoutSpec``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError
from .layers import (
    ConvLayer,
    DenseLayer,
    DropoutSpec,
    Flatten,
    MaxPool2x2,
    OutputHead,
    conv_backward,
    conv_forward_cached,
    dense_backward,
    dense_forward_cached,
    dropout_forward,
    maxpool_2x2_cached,
    maxpool_backward,
    softmax,
)
from .tensor import SeededRng, Tensor

PROB_FLOOR = 1e-12


@dataclass
class ForwardCache:
    net_id: int
    version: int
    step_caches: list
    head_input: Tensor
    probs: Tensor
    labels: np.ndarray
    l2: float = 0.0


def is_parametric(step) -> bool:
    return isinstance(step, (DenseLayer, ConvLayer))


def apply_step(step, h: Tensor, rng: Optional[SeededRng], mode: str):
    if isinstance(step, DenseLayer):
        return dense_forward_cached(step, h)
    if isinstance(step, ConvLayer):
        return conv_forward_cached(step, h)
    if isinstance(step, MaxPool2x2):
        return maxpool_2x2_cached(h)
    if isinstance(step, Flatten):
        return h.reshape(h.shape[0], -1), h.shape
    if isinstance(step, DropoutSpec):
        out, mask = dropout_forward(h, step, rng, mode)
        return out, (mask, mode == "train" and step.rate > 0.0)
    raise TypeError(f"not a layer step: {step!r}")


def run_forward(steps: Sequence, head: OutputHead, x: Tensor, rng, mode: str):
    caches = []
    h = x
    for step in steps:
        h, c = apply_step(step, h, rng, mode)
        caches.append(c)
    if h.ndim != 2 or h.shape[1] != head.in_width:
        raise DimensionError(
            f"head expects [batch, {head.in_width}] features, got {h.shape}")
    probs = softmax(h @ head.weights.T + head.biases)
    return probs, caches, h


def eval_probs(steps: Sequence, head: OutputHead, x: Tensor, chunk: int = 2048) -> Tensor:
    """Eval-mode class probabilities, computed in fixed-size chunks."""
    out = []
    for s in range(0, x.shape[0], chunk):
        probs, _, _ = run_forward(steps, head, x[s:s + chunk], None, "eval")
        out.append(probs)
    return np.concatenate(out, axis=0) if out else np.zeros((0, head.n_classes))


def cross_entropy_grad(probs: Tensor, labels: np.ndarray) -> Tensor:
    """Gradient of the floored mean cross-entropy w.r.t. the logits."""
    n = probs.shape[0]
    rows = np.arange(n)
    d = probs.copy()
    d[rows, labels] -= 1.0
    # below the floor the per-sample loss is constant in the logits
    dead = probs[rows, labels] < PROB_FLOOR
    if dead.any():
        d[dead] = 0.0
    return d / n


def run_backward(steps: Sequence, head: OutputHead, cache: ForwardCache,
                 trainable: Sequence[bool]):
    """Gradients for the head and every trainable parametric step.

    Returns a list aligned with :func:`trainable_params`: per trainable step
    (in order) its weight and bias gradients, then the head's.
    """
    dlogits = cross_entropy_grad(cache.probs, cache.labels)
    l2 = cache.l2
    h_in = cache.head_input
    g_head = [dlogits.T @ h_in + 2.0 * l2 * head.weights, dlogits.sum(axis=0)]

    wanted = [i for i, s in enumerate(steps) if is_parametric(s) and trainable[i]]
    grads_by_step = {}
    if wanted:
        first = wanted[0]
        d = dlogits @ head.weights
        for i in range(len(steps) - 1, first - 1, -1):
            step, c = steps[i], cache.step_caches[i]
            need_dx = i > first
            if isinstance(step, DenseLayer):
                dw, db, d = dense_backward(step, c, d, need_dx)
            elif isinstance(step, ConvLayer):
                dw, db, d = conv_backward(step, c, d, need_dx)
            elif isinstance(step, MaxPool2x2):
                d = maxpool_backward(c, d)
                continue
            elif isinstance(step, Flatten):
                d = d.reshape(c)
                continue
            elif isinstance(step, DropoutSpec):
                mask, applied = c
                if applied:
                    d = d * mask / (1.0 - step.rate)
                continue
            if trainable[i]:
                w = step.weights if isinstance(step, DenseLayer) else step.filters
                grads_by_step[i] = [dw + 2.0 * l2 * w, db]
    out = []
    for i in wanted:
        out.extend(grads_by_step[i])
    out.extend(g_head)
    return out


def trainable_params(steps: Sequence, head: OutputHead, trainable: Sequence[bool]) -> list:
    out = []
    for i, s in enumerate(steps):
        if is_parametric(s) and trainable[i]:
            out.extend(s.params())
    out.extend(head.params())
    return out


def trainable_weights(steps: Sequence, head: OutputHead, trainable: Sequence[bool]) -> list:
    """Weight tensors subject to L2 (biases excluded)."""
    out = []
    for i, s in enumerate(steps):
        if is_parametric(s) and trainable[i]:
            out.append(s.params()[0])
    out.append(head.weights)
    return out
