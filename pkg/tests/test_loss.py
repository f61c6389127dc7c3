"""Tests for the histogram, distance and combined losses."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import softmax

from dmoe.errors import InvalidArgumentError
from dmoe.hist_targets import (
    BinLayout,
    InducedDistribution,
    MultiLayout,
    TargetRange,
    build_bin_layout,
    build_multi_layout,
    induce_heads,
    induce_target,
)
from dmoe.loss import (
    batch_dmoe_loss,
    combine_losses,
    distance_loss,
    dmoe_loss,
    histogram_loss,
    loss_grad_logits,
    regression_loss,
    schedule_coefficients,
)
from dmoe.schema import LossConfig, LossSchedule


def _two_bin_layout() -> BinLayout:
    return BinLayout(np.array([0.0, 0.5, 1.0]), TargetRange(0.0, 1.0))


# -----------------------
# Histogram loss
# -----------------------


def test_histogram_loss_examples():
    """Test cross entropy on hand-computed cases."""
    one_hot = np.eye(8)[2]
    assert histogram_loss(one_hot, one_hot) == pytest.approx(0.0, abs=1e-15)
    assert histogram_loss(np.full(8, 1 / 8), one_hot) == pytest.approx(math.log(8))
    assert histogram_loss([0.9, 0.1], [0.5, 0.5]) == pytest.approx(1.2040, abs=1e-4)


def test_histogram_loss_floors_zero_probabilities():
    """Test a zero predicted mass under target mass is finite."""
    value = histogram_loss([1.0, 0.0], [0.0, 1.0])
    assert math.isfinite(value)
    assert value == pytest.approx(-math.log(1e-12))


def test_histogram_loss_length_mismatch():
    """Test mismatched lengths raise."""
    with pytest.raises(InvalidArgumentError):
        histogram_loss([0.5, 0.5], [1 / 3, 1 / 3, 1 / 3])


@given(seed=st.integers(0, 10_000), n=st.integers(2, 32))
def test_histogram_loss_minimized_at_target(seed, n):
    """Test Gibbs' inequality: HL(f, p) >= HL(p, p)."""
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(n))
    f = rng.dirichlet(np.ones(n))
    assert histogram_loss(f, p) >= histogram_loss(p, p) - 1e-12


@given(seed=st.integers(0, 10_000), n=st.integers(2, 32))
def test_histogram_loss_permutation_invariant(seed, n):
    """Test permuting both vectors together leaves the loss unchanged."""
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(n))
    f = rng.dirichlet(np.ones(n))
    perm = rng.permutation(n)
    assert histogram_loss(f[perm], p[perm]) == pytest.approx(histogram_loss(f, p), rel=1e-12)


# -----------------------
# Distance loss
# -----------------------


def test_distance_loss_examples():
    """Test distance loss on hand-computed cases."""
    layout = build_bin_layout(TargetRange(0.0, 1.0), 8)
    assert distance_loss(np.eye(8)[3], layout, float(layout.centers[3])) == pytest.approx(0.0, abs=1e-15)

    sym = build_bin_layout(TargetRange(-1.0, 1.0), 8)
    assert distance_loss(np.full(8, 1 / 8), sym, 0.3) == pytest.approx(0.3)

    assert distance_loss([0.25, 0.75], _two_bin_layout(), 0.5) == pytest.approx(0.125)


def test_distance_loss_prefers_nearby_mass():
    """Test mass two bins off costs less than mass five bins off."""
    layout = build_bin_layout(TargetRange(0.0, 1.0), 8)
    y = float(layout.centers[1])
    near = distance_loss(np.eye(8)[2], layout, y)
    far = distance_loss(np.eye(8)[6], layout, y)
    assert near < far
    # cross entropy can't tell them apart
    target = np.eye(8)[1]
    assert histogram_loss(np.eye(8)[2], target) == histogram_loss(np.eye(8)[6], target)


# -----------------------
# Combined loss
# -----------------------


def test_combine_losses_example():
    """Test the weighted head mean and the alpha mix."""
    out = combine_losses([(1.0, 0.2), (3.0, 0.4)], np.array([0.5, 0.5]), 0.5, 0.5)
    assert out.hl == pytest.approx(2.0)
    assert out.dl == pytest.approx(0.3)
    assert out.total == pytest.approx(1.15)


def test_dmoe_loss_perfect_prediction():
    """Test HL-only loss is zero when each head predicts its one-hot target."""
    ml = build_multi_layout(build_bin_layout(TargetRange(0.0, 1.0), 8), 2)
    y = 0.41
    targets = induce_heads(np.array([y]), ml, InducedDistribution(kind="categorical"))[0]
    out = dmoe_loss(targets, targets, ml, y, LossConfig(alpha_hl=1.0, alpha_dl=0.0))
    assert out.total == pytest.approx(0.0, abs=1e-15)
    assert len(out.per_head) == 2


def test_dmoe_loss_head_mismatch():
    """Test inconsistent head counts raise."""
    ml = build_multi_layout(build_bin_layout(TargetRange(0.0, 1.0), 8), 2)
    probs = np.full((3, 8), 1 / 8)
    with pytest.raises(InvalidArgumentError):
        dmoe_loss(probs, probs, ml, 0.5, LossConfig())


def test_dmoe_loss_uses_head_weights():
    """Test explicit head weights replace the uniform mean."""
    ml = build_multi_layout(build_bin_layout(TargetRange(0.0, 1.0), 4), 2)
    probs = np.array([np.eye(4)[0], np.eye(4)[3]])
    cfg = LossConfig(alpha_hl=0.0, alpha_dl=1.0, head_weights=[1.0, 0.0])
    out = dmoe_loss(probs, probs, ml, 0.0, cfg)
    assert out.total == pytest.approx(ml[0].centers[0])


def test_dmoe_loss_invariant_under_head_permutation():
    """Test reordering heads with their targets and layouts keeps the loss."""
    rng = np.random.default_rng(5)
    ml = build_multi_layout(build_bin_layout(TargetRange(0.0, 1.0), 8), 4)
    y = 0.37
    targets = induce_heads(np.array([y]), ml, InducedDistribution())[0]
    probs = softmax(rng.normal(size=(4, 8)), axis=-1)
    cfg = LossConfig(alpha_hl=0.4, alpha_dl=0.6)
    perm = [2, 0, 3, 1]
    permuted = MultiLayout(tuple(ml[i] for i in perm), ml.base, ml.shift_step)

    out = dmoe_loss(probs, targets, ml, y, cfg)
    shuffled = dmoe_loss(probs[perm], targets[perm], permuted, y, cfg)
    assert shuffled.total == pytest.approx(out.total, rel=1e-12)
    assert shuffled.hl == pytest.approx(out.hl, rel=1e-12)
    assert shuffled.dl == pytest.approx(out.dl, rel=1e-12)
    assert shuffled.per_head == [out.per_head[i] for i in perm]


# -----------------------
# Gradients
# -----------------------


def test_gradient_is_zero_at_stationary_point():
    """Test f = p and E[f] = y gives a zero gradient."""
    layout = build_bin_layout(TargetRange(0.0, 1.0), 8)
    logits = np.zeros(8)
    y = float(softmax(logits) @ layout.centers)
    grad = loss_grad_logits(logits, softmax(logits), layout, y, LossConfig())
    np.testing.assert_allclose(grad, 0.0, atol=1e-15)


def test_gradient_hl_only_is_f_minus_p():
    """Test the cross-entropy-through-softmax identity."""
    layout = build_bin_layout(TargetRange(0.0, 1.0), 8)
    rng = np.random.default_rng(3)
    logits = rng.normal(size=8)
    target = induce_target(0.3, layout, InducedDistribution())
    grad = loss_grad_logits(logits, target, layout, 0.3, LossConfig(alpha_hl=1.0, alpha_dl=0.0))
    np.testing.assert_allclose(grad, softmax(logits) - target.probs, atol=1e-15)


@pytest.mark.parametrize("seed", range(20))
def test_gradient_matches_finite_differences(seed):
    """Test the analytic logit gradient against central differences."""
    rng = np.random.default_rng(seed)
    ml = build_multi_layout(build_bin_layout(TargetRange(0.0, 1.0), 8), 1)
    layout = ml[0]
    y = float(rng.uniform(0.05, 0.95))
    target = induce_target(y, layout, InducedDistribution()).probs
    cfg = LossConfig(alpha_hl=float(rng.uniform(0.1, 1.0)), alpha_dl=float(rng.uniform(0.1, 1.0)))
    logits = rng.normal(size=8)

    def total(z: np.ndarray) -> float:
        return dmoe_loss(softmax(z)[None, :], target[None, :], ml, y, cfg).total

    h = 1e-6
    numeric = np.array(
        [(total(logits + h * e) - total(logits - h * e)) / (2 * h) for e in np.eye(8)],
    )
    analytic = loss_grad_logits(logits, target, layout, y, cfg)
    scale = max(np.abs(numeric).max(), 1e-8)
    assert np.abs(analytic - numeric).max() / scale < 1e-5


def test_batch_loss_matches_single_sample():
    """Test the batched loss and gradient agree with the per-sample forms."""
    rng = np.random.default_rng(11)
    ml = build_multi_layout(build_bin_layout(TargetRange(0.0, 1.0), 6), 3)
    ys = rng.uniform(0.0, 1.0, size=5)
    targets = induce_heads(ys, ml, InducedDistribution())
    logits = rng.normal(size=(5, 3, 6))
    cfg = LossConfig(alpha_hl=0.3, alpha_dl=0.7)
    weights = np.full(3, 1 / 3)

    breakdown, grad = batch_dmoe_loss(logits, targets, ml.centers, ys, (0.3, 0.7), weights)

    singles = [dmoe_loss(softmax(logits[b], axis=-1), targets[b], ml, ys[b], cfg).total for b in range(5)]
    assert breakdown.total == pytest.approx(np.mean(singles), rel=1e-12)
    for b in range(5):
        for m in range(3):
            expected = loss_grad_logits(logits[b, m], targets[b, m], ml[m], ys[b], cfg) / 3 / 5
            np.testing.assert_allclose(grad[b, m], expected, atol=1e-14)


@pytest.mark.parametrize("n_bins", [4, 16, 256])
@pytest.mark.parametrize("n_heads", [1, 4])
@pytest.mark.parametrize("seed", range(17))
def test_batch_gradient_directional_derivative(n_bins, n_heads, seed):
    """Test the batched logit gradient along random directions against central differences."""
    rng = np.random.default_rng(1000 * n_bins + 10 * n_heads + seed)
    ml = build_multi_layout(build_bin_layout(TargetRange(0.0, 1.0), n_bins), n_heads)
    logits = rng.normal(scale=2.0, size=(1, n_heads, n_bins))
    e = (softmax(logits, axis=-1) * ml.centers).sum(axis=-1)[0]
    y = float(rng.uniform(0.05, 0.95))
    # Keep clear of the |E - y| kink.
    while np.min(np.abs(e - y)) < 1e-3:
        y += 0.01
    ys = np.array([y])
    targets = induce_heads(ys, ml, InducedDistribution())
    alphas = (float(rng.uniform(0.1, 1.0)), float(rng.uniform(0.1, 1.0)))
    weights = np.full(n_heads, 1.0 / n_heads)

    def total(z: np.ndarray) -> float:
        return batch_dmoe_loss(z, targets, ml.centers, ys, alphas, weights)[0].total

    _, grad = batch_dmoe_loss(logits, targets, ml.centers, ys, alphas, weights)
    h = 1e-6
    for _ in range(3):
        d = rng.normal(size=logits.shape)
        d /= np.linalg.norm(d)
        numeric = (total(logits + h * d) - total(logits - h * d)) / (2 * h)
        analytic = float((grad * d).sum())
        assert abs(analytic - numeric) <= 1e-6 + 1e-5 * abs(numeric)


# -----------------------
# Schedule
# -----------------------


def test_schedule_values():
    """Test the linear schedule at start, midpoint and after the end."""
    cfg = LossConfig(schedule=LossSchedule())
    assert schedule_coefficients(0, cfg) == pytest.approx((0.9, 0.1))
    assert schedule_coefficients(10, cfg) == pytest.approx((0.475, 0.525))
    assert schedule_coefficients(20, cfg) == pytest.approx((0.05, 0.95))
    assert schedule_coefficients(500, cfg) == pytest.approx((0.05, 0.95))


def test_schedule_absent_returns_static():
    """Test no schedule gives the static coefficients."""
    cfg = LossConfig(alpha_hl=0.2, alpha_dl=0.8)
    assert schedule_coefficients(7, cfg) == (0.2, 0.8)


def test_schedule_rejects_negative_epoch():
    """Test a negative epoch raises."""
    with pytest.raises(InvalidArgumentError):
        schedule_coefficients(-1, LossConfig())


# -----------------------
# Scalar baselines
# -----------------------


@pytest.mark.parametrize(
    "mode,expected",
    [("l1", 2.5 / 3), ("l2", 2.25 / 3), ("smooth_l1", 1.125 / 3)],
)
def test_regression_losses(mode, expected):
    """Test the scalar baseline losses."""
    pred = np.array([0.5, 1.0, -1.0])
    y = np.array([0.0, 0.0, 0.0])
    value, grad = regression_loss(pred, y, mode)
    assert value == pytest.approx(expected)
    assert grad.shape == (3,)


def test_regression_loss_unknown_mode():
    """Test an unknown scalar loss raises."""
    with pytest.raises(InvalidArgumentError):
        regression_loss(np.zeros(2), np.zeros(2), "huber")
