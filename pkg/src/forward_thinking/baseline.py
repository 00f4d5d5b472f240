"""End-to-end backpropagation baseline on the same kernels, optimizer and loop."""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Set, Tuple

from .data import Dataset
from .errors import DomainError
from .layers import ConvLayer, DenseLayer, DropoutSpec, Flatten, MaxPool2x2, OutputHead
from .sequential import eval_probs, trainable_params, trainable_weights
from .shallow import EpochMetrics, TrainConfig, _Versioned, backward, fit, forward_loss
from .tensor import SeededRng, Tensor


@dataclass(eq=False)
class DeepNet(_Versioned):
    """Any layer sequence plus a softmax head, every parameter trained jointly.

    ``frozen`` holds indices of parametric layers to exclude from training.
    """

    layers: list
    head: OutputHead
    frozen: Set[int] = field(default_factory=set)

    @property
    def steps(self) -> list:
        return self.layers

    @property
    def trainable(self) -> list:
        return [i not in self.frozen for i in range(len(self.layers))]

    def params(self) -> list:
        return trainable_params(self.layers, self.head, self.trainable)

    def weights(self) -> list:
        return trainable_weights(self.layers, self.head, self.trainable)

    def probs(self, x: Tensor) -> Tensor:
        return eval_probs(self.layers, self.head, x)

    @classmethod
    def dense(cls, rng: SeededRng, in_width: int, widths: Sequence[int], n_classes: int,
              dropout_rate: float = 0.0) -> "DeepNet":
        layers = []
        prev = in_width
        for w in widths:
            layers.append(DenseLayer.init(rng, prev, w))
            if dropout_rate:
                layers.append(DropoutSpec(dropout_rate))
            prev = w
        return cls(layers, OutputHead.init(rng, prev, n_classes))

    @classmethod
    def conv(cls, rng: SeededRng, in_shape: Sequence[int], filters: Sequence[int],
             fc_width: int, n_classes: int, drop_stage: float = 0.0,
             drop_fc: float = 0.0) -> "DeepNet":
        """``[conv -> pool] * len(filters) -> dropout -> FC -> dropout -> head``."""
        c, h, w = in_shape
        layers: list = []
        for f in filters:
            layers += [ConvLayer.init(rng, c, f), MaxPool2x2()]
            c, h, w = f, h // 2, w // 2
        if drop_stage:
            layers.append(DropoutSpec(drop_stage))
        layers.append(Flatten())
        layers.append(DenseLayer.init(rng, c * h * w, fc_width))
        if drop_fc:
            layers.append(DropoutSpec(drop_fc))
        return cls(layers, OutputHead.init(rng, fc_width, n_classes))


def backprop_forward_backward(net: DeepNet, x: Tensor, labels, rng: Optional[SeededRng],
                              mode: str = "train", l2: float = 0.0):
    """Loss and reverse-mode gradients for every trainable layer of ``net``."""
    loss, cache = forward_loss(net, x, labels, rng, mode, l2)
    return loss, backward(net, cache)


def train_backprop(net: DeepNet, train: Dataset, val: Dataset, config: TrainConfig,
                   test: Optional[Dataset] = None, on_epoch=None):
    """Train a copy of ``net`` end to end with the shallow trainer's loop."""
    if len(train) == 0:
        raise DomainError("empty training set")
    return fit(copy.deepcopy(net), train, val, config, test=test, on_epoch=on_epoch)


# -- comparison ------------------------------------------------------------

@dataclass
class TimelinePoint:
    seconds: float  # cumulative wall clock at the end of this entry
    accuracy: Optional[float]


def timeline(metrics: Iterable[EpochMetrics]) -> List[TimelinePoint]:
    """Cumulative-time accuracy curve. Entries with a NaN accuracy only add time."""
    out = []
    t = 0.0
    for m in metrics:
        t += m.seconds
        acc = m.test_acc if m.test_acc is not None else m.val_acc
        out.append(TimelinePoint(t, None if acc is None or math.isnan(acc) else acc))
    return out


def accuracy_at(points: Sequence[TimelinePoint], t: float) -> Optional[float]:
    """Accuracy of the latest checkpoint finished by time ``t`` (None before the first)."""
    acc = None
    for p in points:
        if p.seconds <= t and p.accuracy is not None:
            acc = p.accuracy
    return acc


@dataclass
class ComparisonReport:
    rows: List[dict]
    samples: List[dict]
    summary: dict


def compare_runs(ft_metrics: Sequence[EpochMetrics], bp_metrics: Sequence[EpochMetrics],
                 ft_after_seconds: float = 0.0,
                 labels: Tuple[str, str] = ("forward_thinking", "backprop")) -> ComparisonReport:
    """Final accuracy, wall clock, seconds per epoch and accuracy at equal time.

    Samples are taken at every checkpoint time of either run that lies in
    ``[ft_after_seconds, min(total_ft, total_bp)]``. ``ft_ahead`` is true
    when forward thinking's accuracy is at least the baseline's at all of them
    (a baseline with no finished epoch yet counts as behind). ``labels`` name
    the two runs in ``rows``.
    """
    if not ft_metrics or not bp_metrics:
        raise DomainError("compare_runs needs two non-empty metric lists")
    ft_tl, bp_tl = timeline(ft_metrics), timeline(bp_metrics)
    rows = []
    for name, ms, tl in ((labels[0], ft_metrics, ft_tl), (labels[1], bp_metrics, bp_tl)):
        epochs = [m for m in ms if not math.isnan(m.val_acc)]
        final = next((p.accuracy for p in reversed(tl) if p.accuracy is not None), None)
        rows.append({
            "method": name,
            "final_accuracy": final,
            "total_seconds": tl[-1].seconds,
            "epochs": len(epochs),
            "seconds_per_epoch": (sum(m.seconds for m in epochs) / len(epochs)) if epochs else None,
        })
    ft_row, bp_row = rows
    horizon = min(ft_tl[-1].seconds, bp_tl[-1].seconds)
    times = sorted({p.seconds for p in ft_tl + bp_tl if ft_after_seconds <= p.seconds <= horizon})
    samples = []
    ahead = True
    for t in times:
        a, b = accuracy_at(ft_tl, t), accuracy_at(bp_tl, t)
        ok = a is not None and (b is None or a >= b)
        ahead = ahead and ok
        samples.append({"seconds": t, "ft_accuracy": a, "bp_accuracy": b, "ft_ahead": ok})
    fa, ba = ft_row["final_accuracy"], bp_row["final_accuracy"]
    summary = {
        "accuracy_delta": (fa - ba) if fa is not None and ba is not None else None,
        "seconds_delta": ft_row["total_seconds"] - bp_row["total_seconds"],
        "speed_ratio": (bp_row["total_seconds"] / ft_row["total_seconds"])
        if ft_row["total_seconds"] > 0 else None,
        "per_epoch_speed_ratio": (bp_row["seconds_per_epoch"] / ft_row["seconds_per_epoch"])
        if ft_row["seconds_per_epoch"] else None,
        "ft_ahead": ahead,
        "n_samples": len(samples),
    }
    return ComparisonReport(rows, samples, summary)
