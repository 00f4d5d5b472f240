"""Finite-difference gradient check presets.

Each preset draws a small net and batch from a seed and compares analytic
and central-difference gradients of both the shallow net and a two-layer
end-to-end net. Draws that land within ``KINK_MARGIN`` of a ReLU hinge or a
max-pool tie are redrawn from the next substream: at a kink the loss is not
differentiable and the central difference is meaningless there. Draws with an
nonzero analytic gradient entry smaller than ``GRAD_FLOOR`` are redrawn as well; in
float64 the central difference at ``EPSILON`` carries about 1e-10 of absolute
rounding noise, which swamps the relative error of such entries.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from .baseline import DeepNet
from .errors import DomainError
from .layers import ConvLayer, DenseLayer, MaxPool2x2
from .sequential import apply_step
from .shallow import ShallowNet, backward, forward_loss, grad_check
from .tensor import SeededRng

PRESETS = ("dense", "conv")
TOLERANCE = 1e-5
EPSILON = 1e-6
KINK_MARGIN = 1e-5
GRAD_FLOOR = 3e-5
MAX_REDRAWS = 200


@dataclass
class GradCheckCase:
    name: str
    net: object
    x: np.ndarray
    labels: np.ndarray
    dropout_seed: int


def near_kink(net, x: np.ndarray, dropout_seed: int, margin: float = KINK_MARGIN) -> bool:
    """Whether any ReLU pre-activation or pool top-two gap is within ``margin``."""
    rng = SeededRng(dropout_seed)
    h = x
    for step in net.steps:
        out, cache = apply_step(step, h, rng, "train")
        if isinstance(step, (DenseLayer, ConvLayer)) and step.activation == "relu":
            if np.abs(cache[1]).min() < margin:
                return True
        if isinstance(step, MaxPool2x2):
            n, c, hh, ww = h.shape
            win = h[:, :, :hh // 2 * 2, :ww // 2 * 2].reshape(n, c, hh // 2, 2, ww // 2, 2)
            win = np.sort(win.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, hh // 2, ww // 2, 4), -1)
            live = win[..., 3] > margin
            if np.any((win[..., 3] - win[..., 2] < margin) & live):
                return True
        h = out
    return False


def min_gradient(case: GradCheckCase) -> float:
    """Smallest nonzero analytic gradient magnitude (exact zeros are exact on both sides)."""
    _, cache = forward_loss(case.net, case.x, case.labels, SeededRng(case.dropout_seed), "train")
    mags = np.concatenate([np.abs(g).ravel() for g in backward(case.net, cache)])
    nonzero = mags[mags > 0.0]
    return float(nonzero.min()) if nonzero.size else float("inf")


def well_posed(case: GradCheckCase) -> bool:
    return (not near_kink(case.net, case.x, case.dropout_seed)
            and min_gradient(case) >= GRAD_FLOOR)


def _draw(preset: str, rng: SeededRng) -> List[GradCheckCase]:
    gen = rng.generator
    if preset == "dense":
        x = rng.random((4, 10))
        y = gen.integers(0, 3, 4)
        shallow = ShallowNet.dense(rng, 10, 6, 3, dropout_rate=0.3)
        deep = DeepNet.dense(rng, 10, [6, 5], 3, dropout_rate=0.3)
    elif preset == "conv":
        x = rng.random((4, 1, 8, 8))
        y = gen.integers(0, 3, 4)
        shallow = ShallowNet.conv(rng, (1, 8, 8), 4, 6, 3, drop_stage=0.3, drop_fc=0.5)
        deep = DeepNet.conv(rng, (1, 8, 8), [3, 2], 5, 3, drop_stage=0.3, drop_fc=0.5)
    else:
        raise DomainError(f"unknown gradcheck preset {preset!r}; choose from {PRESETS}")
    dseed = int(gen.integers(0, 2**31))
    return [GradCheckCase(f"{preset}/shallow", shallow, x, y, dseed),
            GradCheckCase(f"{preset}/backprop", deep, x, y, dseed)]


def preset_cases(preset: str, seed: int) -> List[GradCheckCase]:
    """Well-posed cases for ``(preset, seed)``; redraws are deterministic."""
    root = SeededRng(seed)
    for attempt in range(MAX_REDRAWS):
        cases = _draw(preset, root.spawn(attempt))
        if all(well_posed(c) for c in cases):
            return cases
    raise DomainError(f"no well-posed draw for preset {preset!r} seed {seed}")


def run_preset(preset: str, seed: int, epsilon: float = EPSILON, corrupt: bool = False) -> dict:
    """Max relative error per case, e.g. ``{"dense/shallow": 1.2e-7, ...}``."""
    return {c.name: grad_check(c.net, c.x, c.labels, epsilon=epsilon,
                               dropout_seed=c.dropout_seed, corrupt=corrupt)
            for c in preset_cases(preset, seed)}
