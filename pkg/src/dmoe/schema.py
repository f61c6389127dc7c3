# src/dmoe/schema.py
"""
Configuration schema for dmoe experiments.

Every section forbids unknown keys, so a typo in a config file or a
``--set`` override is reported instead of silently ignored.

Notes:
- Bin-distribution mean/std live on the normalized [0, 1] domain.
- The induced-distribution width multiple is in units of E[w].
"""

from __future__ import annotations

import math
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    field_validator,
    model_validator,
)

from .hist_targets import BinDistribution, InducedDistribution, TargetRange

LossMode = Literal["l1", "l2", "smooth_l1", "hl_only", "dl_only", "dmoe", "dmoe_scheduled"]
HISTOGRAM_MODES = ("hl_only", "dl_only", "dmoe", "dmoe_scheduled")
SCALAR_MODES = ("l1", "l2", "smooth_l1")

Generator = Literal["linear", "sinusoid", "piecewise_smooth", "gaussian_mixture"]


# -----------------------
# Loss
# -----------------------


def _check_pair(pair: Tuple[float, float]) -> Tuple[float, float]:
    a_hl, a_dl = pair
    if a_hl < 0 or a_dl < 0:
        raise ValueError("loss coefficients must be >= 0")
    if a_hl + a_dl <= 0:
        raise ValueError("alpha_hl + alpha_dl must be > 0")
    return pair


class LossSchedule(BaseModel):
    """Linear schedule of (alpha_hl, alpha_dl) over epochs."""

    start: Tuple[float, float] = (0.9, 0.1)
    end: Tuple[float, float] = (0.05, 0.95)
    duration_epochs: int = Field(default=20, gt=0)

    model_config = ConfigDict(extra="forbid")

    @field_validator("start", "end")
    @classmethod
    def _validate_pair(cls, v: Tuple[float, float]) -> Tuple[float, float]:
        return _check_pair(v)


class LossConfig(BaseModel):
    alpha_hl: float = Field(default=0.5, ge=0)
    alpha_dl: float = Field(default=0.5, ge=0)
    schedule: Optional[LossSchedule] = None
    # Optional weights for the per-head mean; uniform when unset.
    head_weights: Optional[List[float]] = None

    model_config = ConfigDict(extra="forbid")

    @model_validator(mode="after")
    def _validate_alphas(self) -> "LossConfig":
        _check_pair((self.alpha_hl, self.alpha_dl))
        return self

    @field_validator("head_weights")
    @classmethod
    def _validate_weights(cls, v: Optional[List[float]]) -> Optional[List[float]]:
        if v is None:
            return v
        if not v or any(w < 0 or not math.isfinite(w) for w in v):
            raise ValueError("head_weights must be a nonempty list of nonnegative numbers")
        if abs(sum(v) - 1.0) > 1e-9:
            raise ValueError(f"head_weights must sum to 1, got {sum(v)}")
        return v


class LossSpec(LossConfig):
    """Loss section of an experiment: the coefficients plus the training mode."""

    mode: LossMode = "dmoe"
    smooth_l1_beta: float = Field(default=1.0, gt=0)

    def loss_config(self) -> LossConfig:
        """Coefficients actually used for the histogram modes."""
        if self.mode == "hl_only":
            return LossConfig(alpha_hl=1.0, alpha_dl=0.0, head_weights=self.head_weights)
        if self.mode == "dl_only":
            return LossConfig(alpha_hl=0.0, alpha_dl=1.0, head_weights=self.head_weights)
        schedule = self.schedule
        if self.mode == "dmoe_scheduled" and schedule is None:
            schedule = LossSchedule()
        return LossConfig(
            alpha_hl=self.alpha_hl,
            alpha_dl=self.alpha_dl,
            schedule=schedule,
            head_weights=self.head_weights,
        )


# -----------------------
# Training
# -----------------------


class TrainConfig(BaseModel):
    optimizer: Literal["adam", "sgd"] = "adam"
    learning_rate: float = Field(default=1e-3, ge=0)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    adam_eps: float = Field(default=1e-8, gt=0)
    batch_size: int = Field(default=64, gt=0)
    max_epochs: int = Field(default=100, gt=0)
    patience: int = Field(default=20, gt=0)
    clip_norm: Optional[float] = Field(default=None, gt=0)
    seed: int = 0

    model_config = ConfigDict(extra="forbid")


class ModelSpec(BaseModel):
    hidden: List[int] = Field(default_factory=lambda: [64, 64])
    activation: Literal["relu", "tanh"] = "relu"

    model_config = ConfigDict(extra="forbid")

    @field_validator("hidden")
    @classmethod
    def _validate_hidden(cls, v: List[int]) -> List[int]:
        if any(w <= 0 for w in v):
            raise ValueError("hidden widths must be positive")
        return v


# -----------------------
# Layout / targets
# -----------------------


class LayoutSpec(BaseModel):
    n_bins: int = Field(default=64, ge=2)
    n_heads: int = Field(default=4, ge=1)
    bin_distribution: Literal["uniform", "normal"] = "uniform"
    normal_mean: float = 0.5
    normal_std: float = Field(default=0.15, gt=0)
    epsilon: float = Field(default=1e-6, gt=0, le=1e-3)

    model_config = ConfigDict(extra="forbid")

    def bin_distribution_obj(self) -> BinDistribution:
        if self.bin_distribution == "normal":
            return BinDistribution.normal(self.normal_mean, self.normal_std)
        return BinDistribution.uniform()


class InducedSpec(BaseModel):
    kind: Literal["normal", "laplace", "categorical", "k_categorical", "uniform"] = "normal"
    width_multiple: float = Field(default=1.0, gt=0)
    k: int = Field(default=3, ge=1)

    model_config = ConfigDict(extra="forbid")

    def distribution(self) -> InducedDistribution:
        return InducedDistribution(kind=self.kind, width_multiple=self.width_multiple, k=self.k)


class SyntheticTask(BaseModel):
    generator: Generator = "sinusoid"
    input_dim: int = Field(default=2, ge=1)
    n_train: int = Field(default=2000, gt=0)
    n_val: int = Field(default=500, gt=0)
    n_test: int = Field(default=1000, gt=0)
    noise_std: float = Field(default=0.0, ge=0)
    y_min: float = -1.5
    y_max: float = 1.5
    seed: int = 0
    # Added to the first test feature before targets are computed (OOD split).
    test_shift: float = 0.0

    model_config = ConfigDict(extra="forbid")

    @model_validator(mode="after")
    def _validate_range(self) -> "SyntheticTask":
        if not (math.isfinite(self.y_min) and math.isfinite(self.y_max)) or self.y_min >= self.y_max:
            raise ValueError("task range must satisfy y_min < y_max, both finite")
        return self

    def target_range(self) -> TargetRange:
        return TargetRange(self.y_min, self.y_max)


class UncertaintySpec(BaseModel):
    holdout_fraction: float = Field(default=0.1, gt=0, lt=1)
    quantile_levels: int = Field(default=100, ge=2)
    ensemble_size: int = Field(default=0, ge=0, le=5)

    model_config = ConfigDict(extra="forbid")


class RunSpec(BaseModel):
    output_dir: str = "runs"
    n_seeds: int = Field(default=1, ge=1)

    model_config = ConfigDict(extra="forbid")


# -----------------------
# Root config
# -----------------------


class ExperimentConfig(BaseModel):
    schema_version: str = "0.1.0"
    task: SyntheticTask = Field(default_factory=SyntheticTask)
    model: ModelSpec = Field(default_factory=ModelSpec)
    layout: LayoutSpec = Field(default_factory=LayoutSpec)
    induced: InducedSpec = Field(default_factory=InducedSpec)
    loss: LossSpec = Field(default_factory=LossSpec)
    train: TrainConfig = Field(default_factory=TrainConfig)
    uncertainty: UncertaintySpec = Field(default_factory=UncertaintySpec)
    run: RunSpec = Field(default_factory=RunSpec)
    # Dotted key -> values; expanded into a Cartesian grid by `dmoe grid`.
    grid: Dict[str, List[Any]] = Field(default_factory=dict)

    model_config = ConfigDict(extra="forbid")

    @model_validator(mode="after")
    def _validate_consistency(self) -> "ExperimentConfig":
        hw = self.loss.head_weights
        if hw is not None and len(hw) != self.layout.n_heads:
            raise ValueError(
                f"loss.head_weights has {len(hw)} entries for {self.layout.n_heads} heads",
            )
        if self.induced.kind == "k_categorical" and self.induced.k > self.layout.n_bins:
            raise ValueError("induced.k cannot exceed layout.n_bins")
        return self

    @field_validator("grid")
    @classmethod
    def _validate_grid(cls, v: Dict[str, List[Any]]) -> Dict[str, List[Any]]:
        for key, values in v.items():
            if key.split(".", 1)[0] == "grid":
                raise ValueError("grid axes cannot vary the grid itself")
            if not values:
                raise ValueError(f"grid axis {key!r} has no values")
        return v
