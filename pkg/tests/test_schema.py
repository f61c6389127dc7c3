"""Tests for experiment config schema validation."""

import pytest
from pydantic import ValidationError

from dmoe.schema import (
    ExperimentConfig,
    InducedSpec,
    LayoutSpec,
    LossConfig,
    LossSchedule,
    LossSpec,
    SyntheticTask,
    TrainConfig,
)


def test_defaults():
    """Test the default experiment is valid and desk-sized."""
    cfg = ExperimentConfig()
    assert cfg.schema_version == "0.1.0"
    assert cfg.loss.mode == "dmoe"
    assert cfg.layout.n_bins == 64
    assert cfg.layout.epsilon == 1e-6
    assert cfg.grid == {}


def test_unknown_keys_rejected():
    """Test typos in any section are errors."""
    with pytest.raises(ValidationError):
        ExperimentConfig.model_validate({"layout": {"n_bin": 32}})
    with pytest.raises(ValidationError):
        ExperimentConfig.model_validate({"optimiser": {}})


def test_loss_coefficients_validation():
    """Test coefficients must be nonnegative and not both zero."""
    with pytest.raises(ValidationError):
        LossConfig(alpha_hl=-0.1, alpha_dl=1.0)
    with pytest.raises(ValidationError, match="alpha_hl \\+ alpha_dl must be > 0"):
        LossConfig(alpha_hl=0.0, alpha_dl=0.0)
    with pytest.raises(ValidationError):
        LossSchedule(start=(0.0, 0.0))


def test_head_weights_validation():
    """Test head weights must be nonnegative and sum to 1."""
    assert LossConfig(head_weights=[0.25, 0.75]).head_weights == [0.25, 0.75]
    with pytest.raises(ValidationError, match="sum to 1"):
        LossConfig(head_weights=[0.5, 0.6])
    with pytest.raises(ValidationError):
        LossConfig(head_weights=[1.5, -0.5])


def test_head_weights_match_head_count():
    """Test head weights must have one entry per head."""
    with pytest.raises(ValidationError, match="head_weights has 2 entries for 4 heads"):
        ExperimentConfig.model_validate({"loss": {"head_weights": [0.5, 0.5]}})


def test_loss_modes():
    """Test the coefficients each loss mode trains with."""
    assert LossSpec(mode="hl_only").loss_config().alpha_dl == 0.0
    assert LossSpec(mode="dl_only").loss_config().alpha_hl == 0.0
    scheduled = LossSpec(mode="dmoe_scheduled").loss_config()
    assert scheduled.schedule == LossSchedule()
    assert LossSpec(mode="dmoe").loss_config().schedule is None
    with pytest.raises(ValidationError):
        LossSpec(mode="huber")


def test_task_range_validation():
    """Test the task range must be finite and increasing."""
    with pytest.raises(ValidationError, match="y_min < y_max"):
        SyntheticTask(y_min=1.0, y_max=1.0)
    r = SyntheticTask(y_min=-2.0, y_max=3.0).target_range()
    assert r.span == 5.0


def test_layout_spec_ranges():
    """Test layout bounds and the bin distribution object."""
    with pytest.raises(ValidationError):
        LayoutSpec(n_bins=1)
    with pytest.raises(ValidationError):
        LayoutSpec(epsilon=0.01)
    dist = LayoutSpec(bin_distribution="normal", normal_std=0.2).bin_distribution_obj()
    assert (dist.kind, dist.std) == ("normal", 0.2)
    assert LayoutSpec().bin_distribution_obj().kind == "uniform"


def test_k_categorical_k_bounded_by_bins():
    """Test k can't exceed the bin count."""
    with pytest.raises(ValidationError, match="induced.k cannot exceed"):
        ExperimentConfig.model_validate(
            {"layout": {"n_bins": 4}, "induced": {"kind": "k_categorical", "k": 5}},
        )
    spec = InducedSpec(kind="laplace", width_multiple=0.5)
    assert spec.distribution().width_multiple == 0.5


def test_train_config_ranges():
    """Test optimizer hyperparameter bounds."""
    with pytest.raises(ValidationError):
        TrainConfig(beta1=1.0)
    with pytest.raises(ValidationError):
        TrainConfig(batch_size=0)
    assert TrainConfig(learning_rate=0.0).learning_rate == 0.0


def test_grid_validation():
    """Test grid axes must have values and can't target the grid."""
    with pytest.raises(ValidationError, match="has no values"):
        ExperimentConfig.model_validate({"grid": {"layout.n_bins": []}})
    with pytest.raises(ValidationError):
        ExperimentConfig.model_validate({"grid": {"grid.x": [1]}})
    cfg = ExperimentConfig.model_validate({"grid": {"layout.n_heads": [1, 4, 8]}})
    assert cfg.grid["layout.n_heads"] == [1, 4, 8]
