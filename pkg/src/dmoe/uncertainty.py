# src/dmoe/uncertainty.py
"""
Uncertainty scores from predicted histograms and calibration metrics.

Scores:
- entropy of each head, averaged over heads;
- maximum KL divergence over ordered head pairs after interpolating every
  head onto head 0's support.

Scores become predictive standard deviations through an affine fit on a
holdout set; calibration is measured on PIT values CDF_i(y_i) and can be
corrected with an isotonic map fitted on the holdout.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats
from scipy.special import entr, rel_entr
from sklearn.isotonic import IsotonicRegression

from .errors import InvalidArgumentError, RecalibrationError
from .hist_targets import BinLayout, MultiLayout

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
STD_FLOOR = 1e-6
MIN_RECALIBRATION_POINTS = 10


@dataclass
class UncertaintyScore:
    raw: float
    adjusted: Optional[float] = None


@dataclass
class PredictionRecord:
    """One evaluated sample: target, readout, per-head histograms, raw score in nats."""

    y_true: float
    y_pred: float
    probs: np.ndarray
    uncertainty_raw: float

    def __post_init__(self) -> None:
        sums = np.asarray(self.probs, dtype=float).sum(axis=-1)
        if not np.all(np.abs(sums - 1.0) <= 1e-6):
            raise InvalidArgumentError(f"per-head probabilities must sum to 1, got {sums}")

    def as_row(self) -> Dict[str, float]:
        return {"y_true": self.y_true, "y_pred": self.y_pred, "uncertainty_raw": self.uncertainty_raw}


PREDICTION_FIELDS = ("y_true", "y_pred", "uncertainty_raw")


@dataclass
class AffineFit:
    gamma: float
    delta: float
    degenerate: bool = False

    def apply(self, scores: np.ndarray) -> np.ndarray:
        """Adjusted scores used as predictive standard deviations."""
        return np.maximum(self.gamma * np.asarray(scores, dtype=float) + self.delta, STD_FLOOR)

    def score(self, raw: float) -> UncertaintyScore:
        return UncertaintyScore(raw=float(raw), adjusted=float(self.apply(np.array([raw]))[0]))


@dataclass
class CalibrationReport:
    mace: float
    rmsce: float
    ma: float
    levels: np.ndarray = field(default_factory=lambda: np.zeros(0))
    observed: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def curve(self) -> List[Tuple[float, float]]:
        return [(float(q), float(o)) for q, o in zip(self.levels, self.observed)]


@dataclass
class RecalibrationParams:
    affine: Optional[AffineFit]
    isotonic: IsotonicRegression

    def recalibrate(self, pit: np.ndarray) -> np.ndarray:
        return np.asarray(self.isotonic.predict(np.asarray(pit, dtype=float)), dtype=float)


# -----------------------
# Scores
# -----------------------


def entropy_score(probs: Sequence[float] | np.ndarray) -> float:
    """Shannon entropy in nats; 0 log 0 = 0."""
    return float(entr(np.asarray(probs, dtype=float)).sum())


def mean_entropy(head_probs: np.ndarray) -> float:
    f = np.asarray(head_probs, dtype=float)
    if f.ndim != 2 or f.shape[0] == 0:
        raise InvalidArgumentError("mean_entropy needs at least one head")
    return float(entr(f).sum(axis=1).mean())


def interp_to_support(probs: np.ndarray, layout: BinLayout, ref: BinLayout) -> np.ndarray:
    """Re-express a head's histogram on ``ref``'s bins.

    The head's density (mass / width) is linearly interpolated at ref's bin
    centers, multiplied by ref's widths, floored and renormalized.
    """
    p = np.asarray(probs, dtype=float)
    if p.shape != (layout.n_bins,):
        raise InvalidArgumentError(f"{p.size} probabilities for {layout.n_bins} bins")
    if layout.target_range != ref.target_range:
        raise InvalidArgumentError(
            f"layouts cover different ranges: {layout.target_range} vs {ref.target_range}",
        )
    if layout.same_as(ref):
        q = np.maximum(p, PROB_FLOOR)
        return q / q.sum()
    density = p / layout.widths
    q = np.interp(ref.centers, layout.centers, density) * ref.widths
    q = np.maximum(q, PROB_FLOOR)
    return q / q.sum()


def interp_heads(head_probs: np.ndarray, layouts: MultiLayout) -> np.ndarray:
    f = np.asarray(head_probs, dtype=float)
    if f.shape != (layouts.n_heads, layouts.n_bins):
        raise InvalidArgumentError(
            f"head probabilities {f.shape} vs {layouts.n_heads}x{layouts.n_bins} layouts",
        )
    ref = layouts[0]
    return np.stack([interp_to_support(f[i], layouts[i], ref) for i in range(layouts.n_heads)])


def max_kl_score(head_probs: np.ndarray, layouts: MultiLayout) -> float:
    """max over ordered pairs i != j of KL(tau(f_i) || tau(f_j))."""
    if layouts.n_heads < 2:
        raise InvalidArgumentError("max_kl_score needs at least two heads; use the entropy score")
    q = interp_heads(head_probs, layouts)
    kl = rel_entr(q[:, None, :], q[None, :, :]).sum(axis=-1)
    np.fill_diagonal(kl, 0.0)
    return float(max(kl.max(), 0.0))


def batch_scores(probs: np.ndarray, layouts: MultiLayout, method: str) -> np.ndarray:
    """Per-sample scores for a (B, M, N) batch; method is "entropy" or "kl"."""
    if method == "entropy":
        return entr(np.asarray(probs, dtype=float)).sum(axis=-1).mean(axis=-1)
    if method == "kl":
        return np.array([max_kl_score(p, layouts) for p in probs])
    raise InvalidArgumentError(f"unknown uncertainty score: {method}")


def prediction_records(
    probs: np.ndarray,
    preds: np.ndarray,
    y_true: np.ndarray,
) -> List[PredictionRecord]:
    """Records for a (B, M, N) batch, scored by mean head entropy."""
    probs = np.asarray(probs, dtype=float)
    if not (len(probs) == len(preds) == len(y_true)):
        raise InvalidArgumentError("probs, preds and y_true must have the same length")
    scores = entr(probs).sum(axis=-1).mean(axis=-1)
    return [
        PredictionRecord(float(t), float(p), np.asarray(f), float(s))
        for t, p, f, s in zip(y_true, preds, probs, scores)
    ]


# -----------------------
# Affine adjustment
# -----------------------


def fit_affine(scores: Sequence[float] | np.ndarray, abs_errors: Sequence[float] | np.ndarray) -> AffineFit:
    """Least-squares fit abs_errors ~ gamma * scores + delta."""
    s = np.asarray(scores, dtype=float)
    e = np.asarray(abs_errors, dtype=float)
    if s.shape != e.shape or s.ndim != 1 or s.size < 2:
        raise InvalidArgumentError("fit_affine needs two equal-length vectors of >= 2 entries")
    if np.ptp(s) == 0:
        logger.warning("constant uncertainty scores; affine fit falls back to the mean error")
        return AffineFit(gamma=0.0, delta=float(e.mean()), degenerate=True)
    fit = stats.linregress(s, e)
    return AffineFit(gamma=float(fit.slope), delta=float(fit.intercept))


# -----------------------
# PIT values
# -----------------------


def gaussian_pit(mean: np.ndarray, std: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Normal CDF of y under N(mean, max(std, 1e-6))."""
    return stats.norm.cdf(
        np.asarray(y, dtype=float),
        loc=np.asarray(mean, dtype=float),
        scale=np.maximum(np.asarray(std, dtype=float), STD_FLOOR),
    )


def histogram_cdf(probs: np.ndarray, layout: BinLayout, y: float) -> float:
    """Piecewise-linear CDF of a histogram (mass spread uniformly within bins)."""
    cum = np.concatenate([[0.0], np.cumsum(probs)])
    return float(np.clip(np.interp(y, layout.endpoints, cum), 0.0, 1.0))


def histogram_pit(probs: np.ndarray, layouts: MultiLayout, y: np.ndarray) -> np.ndarray:
    """PIT of the mean interpolated histogram, for a (B, M, N) batch."""
    ref = layouts[0]
    out = np.empty(len(probs))
    for i, (p, yi) in enumerate(zip(probs, np.asarray(y, dtype=float))):
        out[i] = histogram_cdf(interp_heads(p, layouts).mean(axis=0), ref, yi)
    return out


def pit_values(cdfs: Sequence, y_true: Sequence[float] | np.ndarray) -> np.ndarray:
    """Evaluate one predictive CDF per sample at its true target."""
    y = np.asarray(y_true, dtype=float)
    if len(cdfs) != y.size:
        raise InvalidArgumentError(f"{len(cdfs)} CDFs for {y.size} targets")
    return np.array([float(cdf(yi)) for cdf, yi in zip(cdfs, y)])


# -----------------------
# Calibration metrics
# -----------------------


def quantile_grid(levels: int = 100) -> np.ndarray:
    return np.linspace(0.0, 1.0, levels)


def calibration_report(pit: Sequence[float] | np.ndarray, levels: Optional[np.ndarray] = None) -> CalibrationReport:
    """MACE, RMSCE and miscalibration area of a set of PIT values.

    Observed coverage at level q is the fraction of PIT values <= q.
    """
    u = np.sort(np.asarray(pit, dtype=float))
    if u.size == 0:
        raise InvalidArgumentError("calibration_report needs at least one sample")
    q = quantile_grid() if levels is None else np.asarray(levels, dtype=float)
    if q.size == 0:
        raise InvalidArgumentError("quantile grid is empty")
    observed = np.searchsorted(u, q, side="right") / u.size
    gap = np.abs(q - observed)
    mace = float(gap.mean())
    rmsce = float(math.sqrt(float(np.mean(gap**2))))
    ma = float(np.trapezoid(gap, q)) if q.size > 1 else mace
    return CalibrationReport(mace=mace, rmsce=rmsce, ma=ma, levels=q, observed=observed)


# -----------------------
# Recalibration
# -----------------------


def isotonic_recalibrate(pit: Sequence[float] | np.ndarray) -> IsotonicRegression:
    """Fit a nondecreasing map from predicted quantile to empirical coverage."""
    u = np.asarray(pit, dtype=float)
    if u.size < MIN_RECALIBRATION_POINTS:
        raise RecalibrationError(
            f"need at least {MIN_RECALIBRATION_POINTS} holdout points, got {u.size}",
        )
    if np.any((u < 0) | (u > 1)) or not np.all(np.isfinite(u)):
        raise InvalidArgumentError("PIT values must lie in [0, 1]")
    ordered = np.sort(u)
    empirical = np.searchsorted(ordered, ordered, side="right") / u.size
    iso = IsotonicRegression(y_min=0.0, y_max=1.0, increasing=True, out_of_bounds="clip")
    iso.fit(ordered, empirical)
    return iso


def fit_recalibration(
    holdout_scores: np.ndarray,
    holdout_pred: np.ndarray,
    holdout_y: np.ndarray,
) -> RecalibrationParams:
    """Affine score adjustment followed by an isotonic PIT map, both on the holdout."""
    affine = fit_affine(holdout_scores, np.abs(holdout_pred - holdout_y))
    pit = gaussian_pit(holdout_pred, affine.apply(holdout_scores), holdout_y)
    return RecalibrationParams(affine=affine, isotonic=isotonic_recalibrate(pit))
