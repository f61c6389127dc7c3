"""Tests for the synthetic tasks and the MAE / EwT scores."""

import numpy as np
import pytest
from scipy import stats

from dmoe.datasets import ewt_threshold, generate_dataset, mae_ewt, mixture_means
from dmoe.errors import InvalidArgumentError
from dmoe.hist_targets import TargetRange
from dmoe.schema import SyntheticTask


def _task(**kwargs):
    base = dict(generator="sinusoid", input_dim=2, n_train=200, n_val=50, n_test=80)
    base.update(kwargs)
    return SyntheticTask(**base)


def test_split_sizes_and_range():
    """Test split sizes and that every target lies in the task range."""
    data = generate_dataset(_task())
    assert (len(data.train), len(data.val), len(data.test)) == (200, 50, 80)
    for split in (data.train, data.val, data.test):
        assert split.X.shape[1] == 2
        assert split.y.min() >= -1.5 and split.y.max() <= 1.5


def test_dataset_is_deterministic():
    """Test the same seed reproduces the same draw and another seed doesn't."""
    a = generate_dataset(_task(seed=3))
    b = generate_dataset(_task(seed=3))
    c = generate_dataset(_task(seed=4))
    np.testing.assert_array_equal(a.train.X, b.train.X)
    np.testing.assert_array_equal(a.test.y, b.test.y)
    assert not np.array_equal(a.train.y, c.train.y)


def test_features_standardized_on_train():
    """Test train features have zero mean and unit variance."""
    data = generate_dataset(_task(n_train=1000))
    np.testing.assert_allclose(data.train.X.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(data.train.X.std(axis=0), 1.0, atol=1e-12)


def test_linear_generator():
    """Test the linear task is 0.8 times the mean raw feature."""
    data = generate_dataset(_task(generator="linear", input_dim=1, y_min=0.0, y_max=1.0))
    raw = data.train.X[:, 0] * data.feature_std[0] + data.feature_mean[0]
    np.testing.assert_allclose(data.train.y, 0.8 * raw, atol=1e-12)


def test_test_shift_moves_only_the_test_split():
    """Test the OOD shift changes test targets and leaves train/val alone."""
    plain = generate_dataset(_task(generator="linear", input_dim=1, y_min=0.0, y_max=1.0))
    shifted = generate_dataset(
        _task(generator="linear", input_dim=1, y_min=0.0, y_max=1.0, test_shift=0.5),
    )
    np.testing.assert_array_equal(plain.train.y, shifted.train.y)
    np.testing.assert_array_equal(plain.val.y, shifted.val.y)
    assert shifted.test.y.mean() > plain.test.y.mean()


def test_gaussian_mixture_matches_its_distribution():
    """Test the mixture targets follow an equal-weight three-component mixture."""
    task = _task(generator="gaussian_mixture", n_train=3000, y_min=0.0, y_max=1.0)
    data = generate_dataset(task)
    r = task.target_range()
    means = mixture_means(r)
    sd = 0.04 * r.span

    def cdf(x):
        return np.mean([stats.norm.cdf(x, m, sd) for m in means], axis=0)

    result = stats.kstest(data.train.y, cdf)
    assert result.pvalue > 0.01


# -----------------------
# Scores
# -----------------------


def test_ewt_threshold():
    """Test the EwT threshold is a thousandth of the range."""
    assert ewt_threshold(TargetRange(-1.5, 1.5)) == pytest.approx(0.003)


def test_mae_ewt_examples():
    """Test MAE and EwT on hand-computed predictions; the threshold is inclusive."""
    r = TargetRange(0.0, 1.0)
    t = ewt_threshold(r)
    pred = np.array([t, 0.5, 0.0, 0.25])
    y = np.array([0.0, 0.5, 0.1, 0.0])
    mae, ewt = mae_ewt(pred, y, r)
    assert mae == pytest.approx((t + 0.0 + 0.1 + 0.25) / 4)
    assert ewt == pytest.approx(0.5)


def test_mae_ewt_rejects_bad_input():
    """Test empty and mismatched inputs raise."""
    r = TargetRange(0.0, 1.0)
    with pytest.raises(InvalidArgumentError):
        mae_ewt(np.array([]), np.array([]), r)
    with pytest.raises(InvalidArgumentError):
        mae_ewt(np.zeros(2), np.zeros(3), r)


def test_gaussian_mixture_is_not_uniform():
    """Test the mixture target marginal is detectably non-uniform."""
    task = _task(generator="gaussian_mixture", n_train=10_000, y_min=0.0, y_max=1.0)
    y = generate_dataset(task).train.y
    assert stats.kstest(y, stats.uniform(0.0, 1.0).cdf).pvalue < 0.01
