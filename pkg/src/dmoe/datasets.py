# src/dmoe/datasets.py
"""
Synthetic bounded-regression tasks and the MAE / EwT scores used on them.

Raw features are drawn uniformly from [0, 1]^D, targets are a fixed function
of the raw features (plus optional noise), clamped into the task range.
Features are then standardized with the training split's statistics.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy import stats

from .errors import InvalidArgumentError
from .hist_targets import TargetRange
from .schema import SyntheticTask

logger = logging.getLogger(__name__)

# EwT threshold = range span / EWT_DIVISOR (0.1% of the largest possible error).
EWT_DIVISOR = 1000.0


@dataclass(frozen=True, eq=False)
class Split:
    X: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return int(self.y.size)

    def take(self, idx: np.ndarray) -> "Split":
        return Split(self.X[idx], self.y[idx])


@dataclass(frozen=True, eq=False)
class DatasetSplits:
    train: Split
    val: Split
    test: Split
    target_range: TargetRange
    feature_mean: np.ndarray
    feature_std: np.ndarray


# -----------------------
# Generators
# -----------------------


def _linear(x: np.ndarray) -> np.ndarray:
    return 0.8 * x.mean(axis=1)


def _sinusoid(x: np.ndarray) -> np.ndarray:
    y = np.sin(2.0 * np.pi * x[:, 0])
    if x.shape[1] > 1:
        y = y + 0.25 * np.cos(np.pi * x[:, 1:]).mean(axis=1)
    return y


def _piecewise_smooth(x: np.ndarray) -> np.ndarray:
    t = x[:, 0]
    y = np.where(t < 0.5, -1.0 + 4.0 * t**2, 0.5 * np.cos(3.0 * np.pi * t))
    if x.shape[1] > 1:
        y = y + 0.2 * x[:, 1:].mean(axis=1)
    return y


def mixture_means(r: TargetRange) -> np.ndarray:
    return r.y_min + r.span * np.array([0.2, 0.5, 0.8])


def _gaussian_mixture(x: np.ndarray, r: TargetRange) -> np.ndarray:
    """Three narrow Gaussian clusters; the component is picked by x_0."""
    comp = np.minimum((3.0 * x[:, 0]).astype(int), 2)
    u = x[:, 1] if x.shape[1] > 1 else np.mod(3.0 * x[:, 0], 1.0)
    z = stats.norm.ppf(np.clip(u, 1e-3, 1.0 - 1e-3))
    return mixture_means(r)[comp] + 0.04 * r.span * z


def target_function(task: SyntheticTask, x: np.ndarray) -> np.ndarray:
    """Noise-free targets for raw features ``x`` (before clamping)."""
    if task.generator == "linear":
        return _linear(x)
    if task.generator == "sinusoid":
        return _sinusoid(x)
    if task.generator == "piecewise_smooth":
        return _piecewise_smooth(x)
    return _gaussian_mixture(x, task.target_range())


def generate_dataset(task: SyntheticTask) -> DatasetSplits:
    """Deterministic train/val/test splits for ``task``.

    The splits are disjoint slices of one draw. ``test_shift`` moves the
    first raw test feature before its targets are computed.
    """
    r = task.target_range()
    rng = np.random.default_rng(task.seed)
    n_total = task.n_train + task.n_val + task.n_test
    raw = rng.uniform(0.0, 1.0, size=(n_total, task.input_dim))
    noise = rng.normal(0.0, 1.0, size=n_total) * task.noise_std

    bounds = np.cumsum([task.n_train, task.n_val])
    if task.test_shift:
        raw[bounds[1] :, 0] += task.test_shift

    y = np.clip(target_function(task, raw) + noise, r.y_min, r.y_max)

    mean = raw[: bounds[0]].mean(axis=0)
    std = raw[: bounds[0]].std(axis=0)
    std = np.where(std > 0, std, 1.0)
    X = (raw - mean) / std

    parts = [Split(X[a:b], y[a:b]) for a, b in zip([0, *bounds], [*bounds, n_total])]
    logger.debug(
        "generated %s: train=%d val=%d test=%d",
        task.generator,
        task.n_train,
        task.n_val,
        task.n_test,
    )
    return DatasetSplits(parts[0], parts[1], parts[2], r, mean, std)


# -----------------------
# Scores
# -----------------------


def ewt_threshold(r: TargetRange) -> float:
    return r.span / EWT_DIVISOR


def mae_ewt(pred: np.ndarray, y: np.ndarray, r: TargetRange) -> Tuple[float, float]:
    """Mean absolute error and the fraction of errors <= the EwT threshold."""
    pred = np.asarray(pred, dtype=float)
    y = np.asarray(y, dtype=float)
    if pred.shape != y.shape:
        raise InvalidArgumentError(f"{pred.size} predictions for {y.size} targets")
    if y.size == 0:
        raise InvalidArgumentError("cannot score an empty prediction set")
    err = np.abs(pred - y)
    return float(err.mean()), float(np.mean(err <= ewt_threshold(r)))
