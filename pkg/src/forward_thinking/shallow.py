"""Per-stage trainer: one trainable hidden stage plus a softmax head, fit by SGD.

Gradients are hand-derived (see :mod:`forward_thinking.sequential`) and can be
checked against central finite differences with :func:`grad_check`.
"""
from __future__ import annotations

import copy
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .data import Dataset
from .errors import ContractError, DimensionError, DomainError
from .layers import ConvLayer, DenseLayer, DropoutSpec, Flatten, MaxPool2x2, OutputHead
from .sequential import (
    PROB_FLOOR,
    ForwardCache,
    eval_probs,
    run_backward,
    run_forward,
    trainable_params,
    trainable_weights,
)
from .tensor import SeededRng, Tensor

DROPOUT_POSITIONS = ("after_stage", "after_fc")


@dataclass
class TrainConfig:
    learning_rate: float = 0.05
    momentum: float = 0.9
    batch_size: int = 64
    epochs: int = 10
    l2_coefficient: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise DomainError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise DomainError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.batch_size < 1:
            raise DomainError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise DomainError(f"epochs must be >= 0, got {self.epochs}")
        if self.l2_coefficient < 0:
            raise DomainError(f"l2_coefficient must be >= 0, got {self.l2_coefficient}")


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    train_acc: float
    val_acc: float
    seconds: float
    test_acc: Optional[float] = None

    def without_timing(self) -> tuple:
        return (self.epoch, self.train_loss, self.train_acc, self.val_acc, self.test_acc)


class _Versioned:
    """Mutation counter so a cache can detect that its net has changed."""

    _version: int = 0

    def mark_updated(self):
        self._version = getattr(self, "_version", 0) + 1


@dataclass(eq=False)
class ShallowNet(_Versioned):
    """``stage -> [pool] -> [dropout] -> [flatten] -> [fc -> [dropout]] -> head``.

    ``stage`` may be ``None`` for a head-only (softmax regression) net.
    ``dropout`` maps a position (``after_stage`` or ``after_fc``) to its spec.
    """

    head: OutputHead
    stage: Optional[DenseLayer | ConvLayer] = None
    pool: bool = False
    intermediate_fc: Optional[DenseLayer] = None
    dropout: Dict[str, DropoutSpec] = field(default_factory=dict)

    def __post_init__(self):
        bad = set(self.dropout) - set(DROPOUT_POSITIONS)
        if bad:
            raise DomainError(f"unknown dropout positions {sorted(bad)}")
        if self.pool and not isinstance(self.stage, ConvLayer):
            raise DomainError("pooling is only attached to convolutional stages")
        if self.intermediate_fc is not None:
            out = self.intermediate_fc.out_width
        elif isinstance(self.stage, DenseLayer):
            out = self.stage.out_width
        else:
            out = None
        if out is not None and out != self.head.in_width:
            raise DimensionError(f"stage output width {out} != head input {self.head.in_width}")
        if (isinstance(self.stage, DenseLayer) and self.intermediate_fc is not None
                and self.intermediate_fc.in_width != self.stage.out_width):
            raise DimensionError("intermediate FC input width does not match the stage")

    @property
    def steps(self) -> list:
        out = []
        if self.stage is not None:
            out.append(self.stage)
            if self.pool:
                out.append(MaxPool2x2())
            if "after_stage" in self.dropout:
                out.append(self.dropout["after_stage"])
        if isinstance(self.stage, ConvLayer):
            out.append(Flatten())
        if self.intermediate_fc is not None:
            out.append(self.intermediate_fc)
            if "after_fc" in self.dropout:
                out.append(self.dropout["after_fc"])
        return out

    @property
    def trainable(self) -> list:
        return [True] * len(self.steps)

    def params(self) -> list:
        return trainable_params(self.steps, self.head, self.trainable)

    def weights(self) -> list:
        return trainable_weights(self.steps, self.head, self.trainable)

    def probs(self, x: Tensor) -> Tensor:
        return eval_probs(self.steps, self.head, x)

    @classmethod
    def dense(cls, rng: SeededRng, in_width: int, width: int, n_classes: int,
              dropout_rate: float = 0.0, activation: str = "relu") -> "ShallowNet":
        stage = DenseLayer.init(rng, in_width, width, activation)
        head = OutputHead.init(rng, width, n_classes)
        drop = {"after_stage": DropoutSpec(dropout_rate)} if dropout_rate else {}
        return cls(head=head, stage=stage, dropout=drop)

    @classmethod
    def conv(cls, rng: SeededRng, in_shape: Sequence[int], n_filters: int, fc_width: int,
             n_classes: int, pool: bool = True, drop_stage: float = 0.0,
             drop_fc: float = 0.0) -> "ShallowNet":
        c, h, w = in_shape
        stage = ConvLayer.init(rng, c, n_filters)
        flat = n_filters * ((h // 2) * (w // 2) if pool else h * w)
        fc = DenseLayer.init(rng, flat, fc_width)
        head = OutputHead.init(rng, fc_width, n_classes)
        drop = {}
        if drop_stage:
            drop["after_stage"] = DropoutSpec(drop_stage)
        if drop_fc:
            drop["after_fc"] = DropoutSpec(drop_fc)
        return cls(head=head, stage=stage, pool=pool, intermediate_fc=fc, dropout=drop)

    @classmethod
    def head_only(cls, rng: SeededRng, in_width: int, n_classes: int) -> "ShallowNet":
        return cls(head=OutputHead.init(rng, in_width, n_classes))


def cross_entropy(probs: Tensor, labels) -> float:
    labels = np.asarray(labels)
    n, k = probs.shape
    if labels.shape != (n,):
        raise DimensionError(f"{labels.shape[0]} labels for {n} rows")
    if n and (labels.min() < 0 or labels.max() >= k):
        raise DomainError(f"labels must lie in [0, {k})")
    p = probs[np.arange(n), labels]
    return float(np.mean(-np.log(np.maximum(p, PROB_FLOOR))))


def forward_loss(net, x: Tensor, labels, rng: Optional[SeededRng], mode: str = "train",
                 l2: float = 0.0):
    """Regularised loss on one batch plus the cache :func:`backward` consumes.

    Works for any net exposing ``steps``, ``trainable``, ``head`` and
    ``weights()`` (``ShallowNet`` and the baseline ``DeepNet``).
    """
    labels = np.asarray(labels, dtype=np.int64)
    steps = net.steps
    probs, caches, h = run_forward(steps, net.head, x, rng, mode)
    loss = cross_entropy(probs, labels)
    if l2:
        loss += l2 * sum(float(np.sum(w * w)) for w in net.weights())
    cache = ForwardCache(id(net), getattr(net, "_version", 0), caches, h, probs, labels, l2)
    return loss, cache


def backward(net, cache: ForwardCache) -> list:
    """Analytic gradients aligned with ``net.params()``."""
    if cache.net_id != id(net) or cache.version != getattr(net, "_version", 0):
        raise ContractError("cache was produced by a different or since-updated net")
    return run_backward(net.steps, net.head, cache, net.trainable)


def sgd_step(params: List[Tensor], grads: List[Tensor], velocity: List[Tensor],
             config: TrainConfig):
    """Classical momentum, in place: ``v = mu*v - lr*g``; ``p = p + v``."""
    if not len(params) == len(grads) == len(velocity):
        raise DimensionError("params, grads and velocity lists differ in length")
    for p, g, v in zip(params, grads, velocity):
        if not p.shape == g.shape == v.shape:
            raise DimensionError(f"shape mismatch {p.shape} / {g.shape} / {v.shape}")
        v *= config.momentum
        v -= config.learning_rate * g
        p += v
    return params, velocity


def accuracy_of(net, data: Dataset) -> float:
    if len(data) == 0:
        raise DomainError("accuracy of an empty dataset")
    probs = eval_probs(net.steps, net.head, data.features)
    return int(np.sum(np.argmax(probs, axis=1) == data.labels)) / len(data)


def fit(net, train: Dataset, val: Dataset, config: TrainConfig,
        test: Optional[Dataset] = None,
        on_epoch: Optional[Callable[[EpochMetrics], None]] = None):
    """Shuffled minibatch SGD loop shared by the shallow and baseline trainers.

    Trains ``net`` in place. The shuffle stream and the dropout stream are two
    children of ``config.seed``; the last partial minibatch is kept.
    """
    if len(train) == 0 or len(val) == 0:
        raise DomainError("training and validation sets must be non-empty")
    n = len(train)
    root = SeededRng(config.seed)
    shuffle_rng, dropout_rng = root.spawn(0), root.spawn(1)
    params = net.params()
    velocity = [np.zeros_like(p) for p in params]
    history = []
    x_all, y_all = train.features, train.labels
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(n)
        loss_sum = 0.0
        correct = 0
        for s in range(0, n, config.batch_size):
            idx = order[s:s + config.batch_size]
            yb = y_all[idx]
            loss, cache = forward_loss(net, x_all[idx], yb, dropout_rng, "train",
                                       config.l2_coefficient)
            grads = backward(net, cache)
            sgd_step(params, grads, velocity, config)
            net.mark_updated()
            loss_sum += loss * len(idx)
            correct += int(np.sum(np.argmax(cache.probs, axis=1) == yb))
        seconds = time.perf_counter() - t0
        m = EpochMetrics(
            epoch=epoch,
            train_loss=loss_sum / n,
            train_acc=correct / n,
            val_acc=accuracy_of(net, val),
            seconds=seconds,
            test_acc=accuracy_of(net, test) if test is not None else None,
        )
        history.append(m)
        if on_epoch is not None:
            on_epoch(m)
    return net, history


def train_shallow(net: ShallowNet, train: Dataset, val: Dataset, config: TrainConfig,
                  test: Optional[Dataset] = None, on_epoch=None):
    """Train a copy of ``net``; returns ``(trained_net, [EpochMetrics, ...])``."""
    if len(train) == 0:
        raise DomainError("empty training set")
    net = copy.deepcopy(net)
    return fit(net, train, val, config, test=test, on_epoch=on_epoch)


def _loss_with_seed(net, x, y, seed, mode, l2):
    rng = SeededRng(seed) if seed is not None else None
    return forward_loss(net, x, y, rng, mode, l2)


def grad_check(net, x: Tensor, labels, epsilon: float = 1e-6, l2: float = 0.0,
               dropout_seed: Optional[int] = None, corrupt: bool = False) -> float:
    """Max relative error between analytic and central-difference gradients.

    With ``dropout_seed`` the check runs in train mode and every evaluation
    redraws the same dropout masks; otherwise dropout is off (eval mode).
    ``corrupt`` perturbs the analytic gradient (negative control).
    """
    if not 0.0 < epsilon <= 1e-3:
        raise DomainError(f"epsilon must be in (0, 1e-3], got {epsilon}")
    net = copy.deepcopy(net)
    mode = "train" if dropout_seed is not None else "eval"
    _, cache = _loss_with_seed(net, x, labels, dropout_seed, mode, l2)
    analytic = backward(net, cache)
    if corrupt:
        analytic = [g * 1.01 + 1e-3 for g in analytic]
    worst = 0.0
    for p, g in zip(net.params(), analytic):
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + epsilon
            lp, _ = _loss_with_seed(net, x, labels, dropout_seed, mode, l2)
            flat[j] = orig - epsilon
            lm, _ = _loss_with_seed(net, x, labels, dropout_seed, mode, l2)
            flat[j] = orig
            num = (lp - lm) / (2.0 * epsilon)
            a = gflat[j]
            err = abs(a - num) / max(abs(a), abs(num), 1e-8)
            worst = max(worst, err)
    return worst
