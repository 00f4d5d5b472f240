"""Experiment configuration: a YAML/JSON key tree validated with pydantic.

Unknown keys are errors. Every omitted field gets a default, and the fully
resolved tree is what a run echoes to ``resolved_config.json``.

Key tree::

    mode: ft_dense | ft_conv | backprop
    seed: int
    output_dir: path
    dataset:
      source: mnist | xor | squares
      mnist_dir, train_limit, test_limit      # mnist
      n, noise                                # synthetic
      val_fraction, split_seed
      augment: {max_shift_px, max_rotation_deg, scale_range, copies_per_image, seed} | null
    stage_defaults: {learning_rate, momentum, batch_size, epochs, l2_coefficient}
    schedule: [{kind, width, pool, head_hidden_width, dropout: {after_stage, after_fc},
                train: {...}, init_seed}]
    final_head: {learning_rate, ..., seed} | null
    retain_last_head: bool
    stopping: {min_improvement, patience, max_stages}
    architecture: {kind: dense | conv, widths: [...], fc_width, dropout: {...}, init_seed}
    train: {...}                              # backprop
"""
from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .data import AugmentConfig
from .shallow import TrainConfig
from .stacking import StageSpec, StoppingPolicy


class ConfigError(ValueError):
    """Config failed validation; the message names the offending fields."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class TrainSection(_Strict):
    learning_rate: Optional[float] = Field(default=None, gt=0)
    momentum: Optional[float] = Field(default=None, ge=0, lt=1)
    batch_size: Optional[int] = Field(default=None, ge=1)
    epochs: Optional[int] = Field(default=None, ge=0)
    l2_coefficient: Optional[float] = Field(default=None, ge=0)
    seed: Optional[int] = None


class AugmentSection(_Strict):
    max_shift_px: int = Field(default=2, ge=0)
    max_rotation_deg: float = Field(default=15.0, ge=0)
    scale_range: Tuple[float, float] = (0.9, 1.1)
    copies_per_image: int = Field(default=1, ge=0)
    seed: Optional[int] = None


class DatasetSection(_Strict):
    source: Literal["mnist", "xor", "squares"]
    mnist_dir: Optional[str] = None
    train_limit: Optional[int] = Field(default=None, ge=1)
    test_limit: Optional[int] = Field(default=None, ge=1)
    n: int = Field(default=2000, ge=4)
    noise: float = Field(default=0.2, ge=0)
    val_fraction: float = Field(default=0.1, gt=0, lt=1)
    split_seed: Optional[int] = None
    augment: Optional[AugmentSection] = None

    @model_validator(mode="after")
    def _mnist_needs_dir(self):
        if self.source == "mnist" and not (self.mnist_dir or os.environ.get("FT_MNIST_DIR")):
            raise ValueError("dataset.mnist_dir is required when dataset.source is 'mnist'")
        return self


class DropoutSection(_Strict):
    after_stage: float = Field(default=0.0, ge=0, lt=1)
    after_fc: float = Field(default=0.0, ge=0, lt=1)


class StageSection(_Strict):
    kind: Literal["dense", "conv"]
    width: int = Field(ge=1)
    pool: bool = True
    head_hidden_width: Optional[int] = Field(default=None, ge=1)
    dropout: DropoutSection = DropoutSection()
    train: TrainSection = TrainSection()
    init_seed: Optional[int] = None


class StoppingSection(_Strict):
    min_improvement: float = 0.001
    patience: int = Field(default=1, ge=1)
    max_stages: Optional[int] = Field(default=None, ge=1)


class ArchitectureSection(_Strict):
    kind: Literal["dense", "conv"]
    widths: List[int]  # empty for a dense softmax-regression control
    fc_width: int = Field(default=64, ge=1)
    dropout: DropoutSection = DropoutSection()
    init_seed: Optional[int] = None


DEFAULT_TRAIN = {"learning_rate": 0.05, "momentum": 0.9, "batch_size": 64, "epochs": 10,
                 "l2_coefficient": 0.0}


class ExperimentConfig(_Strict):
    mode: Literal["ft_dense", "ft_conv", "backprop"]
    seed: int = 0
    output_dir: str = "runs/experiment"
    dataset: DatasetSection
    stage_defaults: TrainSection = TrainSection()
    schedule: List[StageSection] = []
    final_head: Optional[TrainSection] = None
    retain_last_head: bool = False
    stopping: StoppingSection = StoppingSection()
    architecture: Optional[ArchitectureSection] = None
    train: TrainSection = TrainSection()

    @model_validator(mode="after")
    def _mode_sections(self):
        if self.mode in ("ft_dense", "ft_conv") and not self.schedule:
            raise ValueError("schedule must list at least one stage for forward-thinking modes")
        if self.mode == "ft_conv" and any(s.kind != "conv" for s in self.schedule):
            raise ValueError("schedule: every stage must be kind 'conv' in ft_conv mode")
        if self.mode == "ft_dense" and any(s.kind != "dense" for s in self.schedule):
            raise ValueError("schedule: every stage must be kind 'dense' in ft_dense mode")
        if self.mode == "backprop" and self.architecture is None:
            raise ValueError("architecture is required in backprop mode")
        if self.architecture is not None:
            if any(w < 1 for w in self.architecture.widths):
                raise ValueError("architecture.widths: every width must be positive")
            if self.architecture.kind == "conv" and not self.architecture.widths:
                raise ValueError("architecture.widths: a conv architecture needs at least one stage")
        return self

    # -- resolution ----------------------------------------------------------

    def resolved(self) -> "ExperimentConfig":
        """Copy with every optional value filled in (seeds derived from ``seed``)."""
        d = self.model_dump()
        d["output_dir"] = os.environ.get("FT_OUTPUT_DIR", d["output_dir"])
        ds = d["dataset"]
        if ds["source"] == "mnist" and not ds["mnist_dir"]:
            ds["mnist_dir"] = os.environ["FT_MNIST_DIR"]
        if ds["split_seed"] is None:
            ds["split_seed"] = self.seed + 1
        if ds["augment"] is not None and ds["augment"]["seed"] is None:
            ds["augment"]["seed"] = self.seed + 2
        base = {k: (v if v is not None else DEFAULT_TRAIN[k])
                for k, v in d["stage_defaults"].items() if k != "seed"}
        d["stage_defaults"] = dict(base, seed=None)
        for k, st in enumerate(d["schedule"]):
            tr = {key: (val if val is not None else base.get(key)) for key, val in st["train"].items()}
            if tr["seed"] is None:
                tr["seed"] = self.seed * 1000 + 10 + k
            st["train"] = tr
            if st["init_seed"] is None:
                st["init_seed"] = self.seed * 1000 + 500 + k
        if self.mode == "ft_dense" and not self.retain_last_head:
            fh = d["final_head"] or {}
            fh = {key: (fh.get(key) if fh.get(key) is not None else base.get(key))
                  for key in TrainSection.model_fields}
            if fh["seed"] is None:
                fh["seed"] = self.seed * 1000 + 999
            d["final_head"] = fh
        if d["stopping"]["max_stages"] is None and d["schedule"]:
            d["stopping"]["max_stages"] = len(d["schedule"])
        tr = {key: (val if val is not None else base.get(key)) for key, val in d["train"].items()}
        if tr["seed"] is None:
            tr["seed"] = self.seed * 1000 + 10
        d["train"] = tr
        if d["architecture"] is not None and d["architecture"]["init_seed"] is None:
            d["architecture"]["init_seed"] = self.seed * 1000 + 500
        return ExperimentConfig.model_validate(d)

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, indent=2)

    def config_hash(self) -> str:
        d = self.model_dump(mode="json")
        d.pop("output_dir", None)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    # -- conversion to library objects ----------------------------------------

    def stage_specs(self) -> List[StageSpec]:
        out = []
        for st in self.schedule:
            drop = {k: v for k, v in st.dropout.model_dump().items() if v}
            out.append(StageSpec(kind=st.kind, width=st.width, config=_train_config(st.train),
                                 pool=st.pool, head_hidden_width=st.head_hidden_width,
                                 dropout=drop, init_seed=st.init_seed))
        return out

    def final_head_config(self) -> Optional[TrainConfig]:
        return _train_config(self.final_head) if self.final_head is not None else None

    def train_config(self) -> TrainConfig:
        return _train_config(self.train)

    def stopping_policy(self) -> StoppingPolicy:
        return StoppingPolicy(**self.stopping.model_dump())

    def augment_config(self) -> Optional[AugmentConfig]:
        a = self.dataset.augment
        if a is None:
            return None
        return AugmentConfig(max_shift_px=a.max_shift_px, max_rotation_deg=a.max_rotation_deg,
                             scale_range=tuple(a.scale_range),
                             copies_per_image=a.copies_per_image, seed=a.seed)


def _train_config(t: TrainSection) -> TrainConfig:
    return TrainConfig(**t.model_dump())


def _format_errors(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{loc}: {e['msg']}")
    return "; ".join(lines)


def parse_config(data: Dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data).resolved()
    except ValidationError as e:
        raise ConfigError(_format_errors(e)) from None


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {p}: {e}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"config {p} is not valid YAML/JSON: {e}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config {p} must be a mapping at the top level")
    return parse_config(data)
