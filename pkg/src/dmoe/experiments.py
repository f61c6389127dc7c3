# src/dmoe/experiments.py
"""
Single runs, ablation grids and uncertainty evaluation on synthetic tasks.

A grid cell is one combination of ``grid.*`` axis values; each cell is run
``run.n_seeds`` times. A run's seed is derived from the cell's config
fingerprint and the seed index, so re-running one (config, seed) pair
reproduces its row exactly. Cells run sequentially in config order.
"""

from __future__ import annotations

import hashlib
import itertools
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import fingerprint, with_values
from .datasets import DatasetSplits, Split, ewt_threshold, generate_dataset, mae_ewt
from .errors import DivergenceError, InvalidArgumentError, NumericalError
from .hist_targets import (
    BinLayout,
    MultiLayout,
    TargetHistogram,
    TargetRange,
    build_bin_layout,
    build_multi_layout,
)
from .loss import LossBreakdown, schedule_coefficients
from .model import DmoeModel, forward_batch, init_model, predict_batch
from .schema import HISTOGRAM_MODES, ExperimentConfig
from .trainer import EpochRecord, Trainer, TrainResult
from .uncertainty import (
    CalibrationReport,
    MIN_RECALIBRATION_POINTS,
    PredictionRecord,
    batch_scores,
    calibration_report,
    fit_affine,
    gaussian_pit,
    histogram_pit,
    isotonic_recalibrate,
    prediction_records,
    quantile_grid,
)

logger = logging.getLogger(__name__)

RESULT_FIELDS = (
    "fingerprint",
    "seed_index",
    "seed",
    "mode",
    "status",
    "mae",
    "ewt",
    "ewt_threshold",
    "loss_total",
    "loss_hl",
    "loss_dl",
    "best_epoch",
    "error",
)


@dataclass
class MetricRow:
    mae: float
    ewt: float
    ewt_threshold: float
    loss_total: float = math.nan
    loss_hl: float = math.nan
    loss_dl: float = math.nan
    fingerprint: str = ""
    seed_index: int = 0
    seed: int = 0
    mode: str = ""
    status: str = "ok"
    best_epoch: int = 0
    error: str = ""
    axes: Dict[str, Any] = field(default_factory=dict)

    def as_row(self) -> Dict[str, Any]:
        row = asdict(self)
        row.update(row.pop("axes"))
        return row


def compute_metrics(
    predictions: Sequence[float] | np.ndarray,
    y_true: Sequence[float] | np.ndarray,
    target_range: TargetRange,
    breakdown: Optional[LossBreakdown] = None,
) -> MetricRow:
    """MAE and EwT (errors <= span / 1000 count as hits)."""
    mae, ewt = mae_ewt(np.asarray(predictions), np.asarray(y_true), target_range)
    row = MetricRow(mae=mae, ewt=ewt, ewt_threshold=ewt_threshold(target_range))
    if breakdown is not None:
        row.loss_total, row.loss_hl, row.loss_dl = breakdown.total, breakdown.hl, breakdown.dl
    return row


# -----------------------
# Building blocks
# -----------------------


def cell_seed(config_fingerprint: str, seed_index: int) -> int:
    digest = hashlib.sha256(f"{config_fingerprint}:{seed_index}".encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big")


def build_layouts(cfg: ExperimentConfig) -> MultiLayout:
    base = build_bin_layout(
        cfg.task.target_range(),
        cfg.layout.n_bins,
        cfg.layout.bin_distribution_obj(),
        cfg.layout.epsilon,
    )
    return build_multi_layout(base, cfg.layout.n_heads)


def build_model(cfg: ExperimentConfig, seed: int) -> DmoeModel:
    layouts = build_layouts(cfg) if cfg.loss.mode in HISTOGRAM_MODES else None
    return init_model(cfg.task.input_dim, cfg.model.hidden, layouts, cfg.model.activation, seed)


@dataclass
class RunResult:
    config: ExperimentConfig
    data: DatasetSplits
    training: TrainResult
    test: EpochRecord
    metrics: MetricRow

    @property
    def model(self) -> DmoeModel:
        return self.training.model


def run_single(
    cfg: ExperimentConfig,
    seed_index: int = 0,
    data: Optional[DatasetSplits] = None,
) -> RunResult:
    """Train one model and score it on the test split."""
    fp = fingerprint(cfg)
    seed = cell_seed(fp, seed_index)
    data = data or generate_dataset(cfg.task)
    model = build_model(cfg, seed)
    trainer = Trainer(
        cfg.loss,
        cfg.train.model_copy(update={"seed": seed}),
        cfg.induced.distribution(),
        data.target_range,
    )
    training = trainer.train(model, data.train, data.val)

    best = training.best_epoch
    alphas = schedule_coefficients(best, trainer.loss_cfg)
    test = trainer.evaluate(model, data.test, data.target_range, best, alphas, name="test")
    metrics = compute_metrics(predict_batch(model, data.test.X), data.test.y, data.target_range)
    metrics.loss_total, metrics.loss_hl, metrics.loss_dl = test.loss_total, test.loss_hl, test.loss_dl
    metrics.fingerprint, metrics.seed_index, metrics.seed = fp, seed_index, seed
    metrics.mode, metrics.best_epoch = cfg.loss.mode, best
    return RunResult(cfg, data, training, test, metrics)


# -----------------------
# Grids
# -----------------------


def expand_grid(cfg: ExperimentConfig) -> List[Tuple[Dict[str, Any], ExperimentConfig]]:
    """Cartesian product of the grid axes, in axis and value order."""
    if not cfg.grid:
        return [({}, cfg.model_copy(update={"grid": {}}))]
    axes = list(cfg.grid)
    cells = []
    for combo in itertools.product(*(cfg.grid[a] for a in axes)):
        values = dict(zip(axes, combo))
        cell = with_values(cfg.model_copy(update={"grid": {}}), values)
        cells.append((values, cell))
    return cells


def run_grid(
    cfg: ExperimentConfig,
    on_row: Optional[Callable[[MetricRow], None]] = None,
) -> List[MetricRow]:
    """One MetricRow per (cell, seed); failed runs become rows with status "failed"."""
    rows: List[MetricRow] = []
    for values, cell in expand_grid(cfg):
        data = generate_dataset(cell.task)
        for seed_index in range(cfg.run.n_seeds):
            logger.info("cell %s seed %d", values or "(base)", seed_index)
            try:
                row = run_single(cell, seed_index, data).metrics
            except (DivergenceError, NumericalError) as e:
                logger.warning("cell %s seed %d failed: %s", values, seed_index, e)
                fp = fingerprint(cell)
                row = MetricRow(
                    mae=math.nan,
                    ewt=math.nan,
                    ewt_threshold=ewt_threshold(data.target_range),
                    fingerprint=fp,
                    seed_index=seed_index,
                    seed=cell_seed(fp, seed_index),
                    mode=cell.loss.mode,
                    status="failed",
                    error=str(e),
                )
            row.axes = dict(values)
            rows.append(row)
            if on_row is not None:
                on_row(row)
    return rows


def result_fields(cfg: ExperimentConfig) -> List[str]:
    return [*RESULT_FIELDS, *cfg.grid]


def directionality_summary(
    rows: Sequence[Dict[str, Any]],
    axis: str,
    better: Any,
    worse: Any,
    metric: str = "mae",
    lower_is_better: bool = True,
    factor: float = 1.0,
) -> Dict[str, int]:
    """Per-seed wins of ``axis == better`` over ``axis == worse``.

    A seed counts as a win when better's metric beats ``factor`` times
    worse's (``<=`` for lower-is-better metrics, ``>=`` otherwise).
    """
    by_seed: Dict[int, Dict[Any, float]] = {}
    for row in rows:
        if row.get("status", "ok") != "ok":
            continue
        by_seed.setdefault(int(row["seed_index"]), {})[row[axis]] = float(row[metric])
    wins = seeds = 0
    for values in by_seed.values():
        if better not in values or worse not in values:
            continue
        seeds += 1
        a, b = values[better], factor * values[worse]
        wins += int(a <= b if lower_is_better else a >= b)
    return {"wins": wins, "seeds": seeds}


def quantization_floor(layout: BinLayout) -> float:
    """Mean |y - nearest-bin center| for y uniform over the range."""
    w = layout.widths
    return float((w**2).sum() / (4.0 * layout.target_range.span))


def distance_bias_fixture() -> Dict[str, Any]:
    """Two predictions with the same histogram loss but different distance loss.

    The target is one-hot at bin 1; "near" is one-hot at bin 2 and "far" at
    bin 6. Both miss the target bin entirely, so both histogram losses sit at
    the log floor.
    """
    layout = build_bin_layout(TargetRange(0.0, 1.0), 8)
    eye = np.eye(8)
    y = float(layout.centers[1])
    target = TargetHistogram(eye[1], layout)
    near, far = eye[2].copy(), eye[6].copy()
    return {"layout": layout, "y": y, "target": target, "near": near, "far": far}


# -----------------------
# Uncertainty evaluation
# -----------------------


@dataclass
class CalibrationOutcome:
    reports: Dict[str, CalibrationReport]
    n_holdout: int
    n_eval: int
    predictions: List[PredictionRecord] = field(default_factory=list)

    def summary_rows(self) -> List[Dict[str, Any]]:
        return [
            {
                "method": name,
                "mace": r.mace,
                "rmsce": r.rmsce,
                "ma": r.ma,
                "n_holdout": self.n_holdout,
                "n_eval": self.n_eval,
            }
            for name, r in self.reports.items()
        ]

    def curve_rows(self) -> List[Dict[str, Any]]:
        return [
            {"method": name, "level": q, "observed": o}
            for name, r in self.reports.items()
            for q, o in r.curve
        ]


CALIBRATION_FIELDS = ("method", "mace", "rmsce", "ma", "n_holdout", "n_eval")
CURVE_FIELDS = ("method", "level", "observed")


def holdout_split(val: Split, fraction: float) -> Split:
    n = max(MIN_RECALIBRATION_POINTS, math.ceil(fraction * len(val)))
    if n > len(val):
        raise InvalidArgumentError(f"validation split has {len(val)} points, holdout needs {n}")
    return val.take(np.arange(n))


def _gaussian_methods(
    name: str,
    reports: Dict[str, CalibrationReport],
    levels: np.ndarray,
    hold: Tuple[np.ndarray, np.ndarray, np.ndarray],
    evaluation: Tuple[np.ndarray, np.ndarray, np.ndarray],
    affine: bool,
) -> None:
    """Raw, (+affine) and +isotonic reports for a score used as a Gaussian std."""
    pred_h, s_h, y_h = hold
    pred_e, s_e, y_e = evaluation
    reports[name] = calibration_report(gaussian_pit(pred_e, s_e, y_e), levels)
    if affine:
        fit = fit_affine(s_h, np.abs(pred_h - y_h))
        s_h, s_e = fit.apply(s_h), fit.apply(s_e)
        name = f"{name}+affine"
        reports[name] = calibration_report(gaussian_pit(pred_e, s_e, y_e), levels)
    iso = isotonic_recalibrate(gaussian_pit(pred_h, s_h, y_h))
    reports[f"{name}+isotonic"] = calibration_report(
        iso.predict(gaussian_pit(pred_e, s_e, y_e)), levels
    )


def train_ensemble(cfg: ExperimentConfig, data: DatasetSplits) -> List[DmoeModel]:
    """Scalar L1 members trained from different seeds."""
    member_cfg = with_values(cfg.model_copy(update={"grid": {}}), {"loss.mode": "l1"})
    return [run_single(member_cfg, 1000 + k, data).model for k in range(cfg.uncertainty.ensemble_size)]


def evaluate_uncertainty(
    cfg: ExperimentConfig,
    data: DatasetSplits,
    model: DmoeModel,
) -> CalibrationOutcome:
    """Score calibration of every uncertainty route on the test split.

    Affine and isotonic maps are fitted on a holdout carved from the start
    of the validation split, disjoint from the evaluation data.
    """
    if model.layouts is None:
        raise InvalidArgumentError("uncertainty evaluation needs a histogram model")
    layouts = model.layouts
    levels = quantile_grid(cfg.uncertainty.quantile_levels)
    hold = holdout_split(data.val, cfg.uncertainty.holdout_fraction)
    test = data.test

    probs_h = forward_batch(model, hold.X).probs
    probs_e = forward_batch(model, test.X).probs
    pred_h = predict_batch(model, hold.X)
    pred_e = predict_batch(model, test.X)

    reports: Dict[str, CalibrationReport] = {}
    methods = ["entropy", "kl"] if layouts.n_heads >= 2 else ["entropy"]
    for method in methods:
        _gaussian_methods(
            method,
            reports,
            levels,
            (pred_h, batch_scores(probs_h, layouts, method), hold.y),
            (pred_e, batch_scores(probs_e, layouts, method), test.y),
            affine=True,
        )

    pit_e = histogram_pit(probs_e, layouts, test.y)
    reports["histogram"] = calibration_report(pit_e, levels)
    iso = isotonic_recalibrate(histogram_pit(probs_h, layouts, hold.y))
    reports["histogram+isotonic"] = calibration_report(iso.predict(pit_e), levels)

    if cfg.uncertainty.ensemble_size > 0:
        members = train_ensemble(cfg, data)
        ens_h = np.stack([predict_batch(m, hold.X) for m in members])
        ens_e = np.stack([predict_batch(m, test.X) for m in members])
        _gaussian_methods(
            "ensemble",
            reports,
            levels,
            (ens_h.mean(axis=0), ens_h.std(axis=0), hold.y),
            (ens_e.mean(axis=0), ens_e.std(axis=0), test.y),
            affine=False,
        )

    for name, report in reports.items():
        logger.debug("calibration %s: mace=%.4f rmsce=%.4f ma=%.4f", name, report.mace, report.rmsce, report.ma)
    return CalibrationOutcome(reports, len(hold), len(test), prediction_records(probs_e, pred_e, test.y))
