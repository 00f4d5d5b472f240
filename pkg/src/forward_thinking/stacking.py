"""Forward thinking: train a shallow net per stage, freeze its layer, push the data through.

Dense schedules discard each stage's temporary head and fit a fresh final
head on the last synthetic dataset. Conv schedules re-initialise the
FC layer and head at every stage and keep the last ones as the classifier.
"""
from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .data import Dataset
from .errors import DimensionError, DomainError
from .layers import (
    ConvLayer,
    DenseLayer,
    OutputHead,
    conv_forward,
    dense_forward,
    maxpool_2x2,
    softmax_forward,
)
from .shallow import EpochMetrics, ShallowNet, TrainConfig, accuracy_of, train_shallow
from .tensor import SeededRng, Tensor, argmax_rows

TRANSFORM_CHUNK = 1024


@dataclass
class StageSpec:
    """One stage of a schedule.

    ``width`` is the neuron count of a dense stage or the filter count of a
    conv stage. ``dropout`` maps ``after_stage`` / ``after_fc`` to a rate.
    ``init_seed`` drives parameter initialisation (defaults to ``config.seed``).
    """

    kind: str
    width: int
    config: TrainConfig = field(default_factory=TrainConfig)
    pool: bool = True
    head_hidden_width: Optional[int] = None
    dropout: Dict[str, float] = field(default_factory=dict)
    init_seed: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ("dense", "conv"):
            raise DomainError(f"stage kind must be 'dense' or 'conv', got {self.kind!r}")
        if self.width < 1:
            raise DomainError(f"stage width must be positive, got {self.width}")
        if self.head_hidden_width is not None and self.head_hidden_width < 1:
            raise DomainError("head_hidden_width must be positive")
        if self.kind == "dense":
            self.pool = False

    @property
    def seed_for_init(self) -> int:
        return self.config.seed if self.init_seed is None else self.init_seed

    def output_shape(self, in_shape: Sequence[int]) -> tuple:
        if self.kind == "dense":
            return (self.width,)
        _, h, w = in_shape
        return (self.width, h // 2, w // 2) if self.pool else (self.width, h, w)


def _digest(arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(str(a.shape).encode())
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


class FrozenStage:
    """A trained layer whose parameters are read-only from here on."""

    def __init__(self, layer: DenseLayer | ConvLayer, pool: bool, index: int):
        w, b = (layer.weights, layer.biases) if isinstance(layer, DenseLayer) else (
            layer.filters, layer.biases)
        w, b = w.copy(), b.copy()
        w.flags.writeable = False
        b.flags.writeable = False
        if isinstance(layer, DenseLayer):
            self.layer = DenseLayer(w, b, layer.activation)
        else:
            self.layer = ConvLayer(w, b, layer.activation)
        self.pool = bool(pool)
        self.index = int(index)
        self.digest = self.param_hash()

    @property
    def kind(self) -> str:
        return "dense" if isinstance(self.layer, DenseLayer) else "conv"

    def param_hash(self) -> str:
        return _digest(self.layer.params())

    def forward(self, x: Tensor) -> Tensor:
        if isinstance(self.layer, DenseLayer):
            return dense_forward(self.layer, x)
        out = conv_forward(self.layer, x)
        return maxpool_2x2(out) if self.pool else out

    def output_shape(self, in_shape: Sequence[int]) -> tuple:
        if isinstance(self.layer, DenseLayer):
            return (self.layer.out_width,)
        _, h, w = in_shape
        f = self.layer.n_filters
        return (f, h // 2, w // 2) if self.pool else (f, h, w)

    def __repr__(self):
        return f"FrozenStage(index={self.index}, kind={self.kind}, pool={self.pool})"


@dataclass
class StoppingPolicy:
    min_improvement: float = 0.001
    patience: int = 1
    max_stages: Optional[int] = None

    def __post_init__(self):
        if self.patience < 1:
            raise DomainError("patience must be >= 1")
        if self.max_stages is not None and self.max_stages < 1:
            raise DomainError("max_stages must be >= 1")


def should_stop(history: Sequence[float], policy: StoppingPolicy) -> bool:
    """True once the best validation accuracy has stalled for ``patience`` stages."""
    if not history:
        raise DomainError("should_stop needs at least one stage result")
    if policy.max_stages is not None and len(history) >= policy.max_stages:
        return True
    best = history[0]
    stale = 0
    for acc in history[1:]:
        if acc >= best + policy.min_improvement:
            best = acc
            stale = 0
        else:
            stale += 1
    return stale >= policy.patience


@dataclass
class StageResult:
    index: int
    spec: StageSpec
    metrics: List[EpochMetrics]
    transform_seconds: float
    digest: str

    @property
    def val_acc(self) -> float:
        return self.metrics[-1].val_acc if self.metrics else float("nan")


@dataclass
class StackedModel:
    stages: List[FrozenStage]
    head: OutputHead
    head_fc: Optional[DenseLayer] = None
    metadata: dict = field(default_factory=dict)

    def features(self, x: Tensor) -> Tensor:
        h = x
        for st in self.stages:
            h = st.forward(h)
        return h

    def head_probs(self, feats: Tensor) -> Tensor:
        h = feats.reshape(feats.shape[0], -1)
        if self.head_fc is not None:
            h = dense_forward(self.head_fc, h)
        return softmax_forward(self.head, h)

    def probs(self, x: Tensor, chunk: int = 2048) -> Tensor:
        out = [self.head_probs(self.features(x[s:s + chunk])) for s in range(0, x.shape[0], chunk)]
        return np.concatenate(out) if out else np.zeros((0, self.head.n_classes))


def _check_input(model: StackedModel, x: Tensor):
    if not model.stages:
        return
    first = model.stages[0].layer
    if isinstance(first, DenseLayer):
        ok = x.ndim == 2 and x.shape[1] == first.in_width
    else:
        ok = x.ndim == 4 and x.shape[1] == first.in_channels
    if not ok:
        raise DimensionError(f"input of shape {x.shape} does not fit the first stage")


def predict(model: StackedModel, x: Tensor) -> np.ndarray:
    _check_input(model, x)
    return argmax_rows(model.probs(x))


def predict_from_features(model: StackedModel, feats: Tensor) -> np.ndarray:
    """Predictions from features already pushed through every frozen stage."""
    return argmax_rows(model.head_probs(feats))


def evaluate(model: StackedModel, data: Dataset) -> float:
    if len(data) == 0:
        raise DomainError("cannot evaluate on an empty dataset")
    return int(np.sum(predict(model, data.features) == data.labels)) / len(data)


def freeze_and_transform(stage, data: Dataset, spill_path: Optional[Path] = None) -> Dataset:
    """Map every sample through a frozen (or trained) stage; labels are kept.

    The result never aliases ``data``. With ``spill_path`` the features are
    written to a NumPy ``.npy`` memory map at that path instead of RAM.
    """
    if not isinstance(stage, FrozenStage):
        stage = FrozenStage(stage, pool=False, index=-1)
    n = len(data)
    in_shape = data.sample_shape
    layer = stage.layer
    if isinstance(layer, DenseLayer):
        if len(in_shape) != 1 or in_shape[0] != layer.in_width:
            raise DimensionError(f"dense stage expects width {layer.in_width}, data has {in_shape}")
    elif len(in_shape) != 3 or in_shape[0] != layer.in_channels:
        raise DimensionError(f"conv stage expects {layer.in_channels} channels, data has {in_shape}")
    out_shape = (n,) + stage.output_shape(in_shape)
    if spill_path is not None:
        out = np.lib.format.open_memmap(spill_path, mode="w+", dtype=np.float64, shape=out_shape)
    else:
        out = np.empty(out_shape)
    for s in range(0, n, TRANSFORM_CHUNK):
        out[s:s + TRANSFORM_CHUNK] = stage.forward(data.features[s:s + TRANSFORM_CHUNK])
    return Dataset(out, data.labels.copy(), data.n_classes)


def build_stage_net(spec: StageSpec, in_shape: Sequence[int], n_classes: int) -> ShallowNet:
    """Fresh shallow net for one stage: new layer plus a newly initialised head."""
    rng = SeededRng(spec.seed_for_init)
    drop = spec.dropout
    if spec.kind == "dense":
        if len(in_shape) != 1:
            raise DimensionError(f"dense stage needs flat features, got shape {in_shape}")
        net = ShallowNet.dense(rng, in_shape[0], spec.width, n_classes,
                               dropout_rate=drop.get("after_stage", 0.0))
        if spec.head_hidden_width:
            fc = DenseLayer.init(rng, spec.width, spec.head_hidden_width)
            net = ShallowNet(head=OutputHead.init(rng, spec.head_hidden_width, n_classes),
                             stage=net.stage, intermediate_fc=fc, dropout=net.dropout)
        return net
    if len(in_shape) != 3:
        raise DimensionError(f"conv stage needs [C, H, W] features, got shape {in_shape}")
    return ShallowNet.conv(rng, in_shape, spec.width, spec.head_hidden_width or 64, n_classes,
                           pool=spec.pool, drop_stage=drop.get("after_stage", 0.0),
                           drop_fc=drop.get("after_fc", 0.0))


@dataclass
class ForwardThinkingResult:
    model: StackedModel
    stages: List[StageResult]
    final_metrics: List[EpochMetrics]
    stopped_early: bool


def _run(train, val, schedule, policy, test, keep_last_head, final_config, on_epoch,
         spill_dir):
    if not schedule:
        raise DomainError("schedule must contain at least one stage")
    policy = policy or StoppingPolicy()
    cur = {"train": train, "val": val, "test": test}
    frozen: List[FrozenStage] = []
    results: List[StageResult] = []
    history: List[float] = []
    last_net = None
    stopped_early = False
    for k, spec in enumerate(schedule):
        net = build_stage_net(spec, cur["train"].sample_shape, train.n_classes)
        cb = (lambda m, k=k: on_epoch("stage", k, m)) if on_epoch else None
        net, metrics = train_shallow(net, cur["train"], cur["val"], spec.config,
                                     test=cur["test"], on_epoch=cb)
        fs = FrozenStage(net.stage, pool=net.pool, index=k)
        t0 = time.perf_counter()
        for name in ("train", "val", "test"):
            if cur[name] is not None:
                spill = Path(spill_dir) / f"stage{k}_{name}.npy" if spill_dir else None
                cur[name] = freeze_and_transform(fs, cur[name], spill)
        t_transform = time.perf_counter() - t0
        frozen.append(fs)
        last_net = net
        results.append(StageResult(k, spec, metrics, t_transform, fs.digest))
        if on_epoch:
            on_epoch("transform", k, EpochMetrics(0, float("nan"), float("nan"),
                                                  float("nan"), t_transform))
        history.append(results[-1].val_acc)
        if k + 1 < len(schedule) and should_stop(history, policy):
            stopped_early = True
            break

    final_metrics: List[EpochMetrics] = []
    if keep_last_head:
        head, head_fc = last_net.head, last_net.intermediate_fc
    else:
        cfg = final_config or TrainConfig()
        feats = cur["train"].flat() if cur["train"].is_image else cur["train"]
        fval = cur["val"].flat() if cur["val"].is_image else cur["val"]
        ftest = None
        if cur["test"] is not None:
            ftest = cur["test"].flat() if cur["test"].is_image else cur["test"]
        hnet = ShallowNet.head_only(SeededRng(cfg.seed), feats.sample_shape[0], train.n_classes)
        cb = (lambda m: on_epoch("final", len(frozen), m)) if on_epoch else None
        hnet, final_metrics = train_shallow(hnet, feats, fval, cfg, test=ftest, on_epoch=cb)
        head, head_fc = hnet.head, None
    model = StackedModel(frozen, head, head_fc, metadata={
        "schedule": [spec_to_dict(s) for s in schedule[:len(frozen)]],
        "final_config": None if keep_last_head else vars(final_config or TrainConfig()),
    })
    return ForwardThinkingResult(model, results, final_metrics, stopped_early)


def train_forward_thinking(train: Dataset, val: Dataset, schedule: Sequence[StageSpec],
                           policy: Optional[StoppingPolicy] = None,
                           final_config: Optional[TrainConfig] = None,
                           test: Optional[Dataset] = None,
                           retain_last_head: bool = False,
                           on_epoch: Optional[Callable] = None,
                           spill_dir=None) -> ForwardThinkingResult:
    """Greedy stage-by-stage training of a dense network.

    After the last stage a fresh softmax head is fit on the final synthetic
    data with ``final_config`` unless ``retain_last_head`` keeps the last
    stage's head. ``on_epoch(phase, stage, metrics)`` is called for every
    epoch and for each dataset transform.
    """
    return _run(train, val, schedule, policy, test, retain_last_head, final_config,
                on_epoch, spill_dir)


def train_forward_thinking_conv(train: Dataset, val: Dataset, schedule: Sequence[StageSpec],
                                policy: Optional[StoppingPolicy] = None,
                                test: Optional[Dataset] = None,
                                on_epoch: Optional[Callable] = None,
                                spill_dir=None) -> ForwardThinkingResult:
    """Greedy training of conv stages; the last stage's FC layer and head are kept."""
    if not train.is_image:
        raise DimensionError("conv forward thinking needs image-layout data [N, C, H, W]")
    if any(s.kind != "conv" for s in schedule):
        raise DomainError("every stage of a conv schedule must be kind 'conv'")
    return _run(train, val, schedule, policy, test, True, None, on_epoch, spill_dir)


def spec_to_dict(spec: StageSpec) -> dict:
    return {
        "kind": spec.kind,
        "width": spec.width,
        "pool": spec.pool,
        "head_hidden_width": spec.head_hidden_width,
        "dropout": dict(sorted(spec.dropout.items())),
        "init_seed": spec.init_seed,
        "config": vars(spec.config).copy(),
    }
