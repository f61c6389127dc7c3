"""
Core dmoe operations: each CLI verb maps to one method writing its files.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import logging

import numpy as np

from . import bounds, experiments, plots
from .config import ConfigManager
from .datasets import generate_dataset
from .errors import DivergenceError, InvalidArgumentError
from .hist_targets import (
    BinDistribution,
    MultiLayout,
    TargetRange,
    build_bin_layout,
    compare_layout_errors,
    format_layout,
)
from .model import load_checkpoint, save_checkpoint
from .schema import ExperimentConfig
from .trainer import LOG_FIELDS, EpochRecord
from .uncertainty import PREDICTION_FIELDS
from .utils import fs_utils

logger = logging.getLogger(__name__)

TRAIN_LOG = "train_log.csv"
METRICS = "metrics.csv"
CHECKPOINT = "checkpoint.npz"
RESULTS = "results.csv"
BOUNDS = "bounds.csv"
CALIBRATION = "calibration.csv"
CALIBRATION_CURVES = "calibration_curves.csv"
PREDICTIONS = "predictions.csv"


@dataclass
class RunOutputs:
    out_dir: Path
    files: List[Path] = field(default_factory=list)
    summary: Dict[str, Any] = field(default_factory=dict)


def _write_log(path: Path, log: List[EpochRecord]) -> Path:
    return fs_utils.write_csv(path, LOG_FIELDS, [r.as_row() for r in log])


def _standard_normal(x: float) -> float:
    return float(np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi))


class DmoeCore:
    """Core orchestrator for dmoe runs."""

    def __init__(self, output_dir: Path):
        self.output_dir = Path(output_dir).resolve()

    # ----- Public ops -----

    def layout(self, cfg: ExperimentConfig) -> MultiLayout:
        return experiments.build_layouts(cfg)

    def layout_rows(self, layouts: MultiLayout) -> List[Dict[str, Any]]:
        return [
            {
                "head": i,
                "bins": layout.n_bins,
                "min_width": float(layout.widths.min()),
                "max_width": float(layout.widths.max()),
                "mean_width": layout.mean_width,
                "first": float(layout.endpoints[1]),
                "last": float(layout.endpoints[-2]),
            }
            for i, layout in enumerate(layouts)
        ]

    def write_layout(self, layouts: MultiLayout, path: Path) -> Path:
        fs_utils.write_text(path, format_layout(layouts.base))
        return path

    def normal_density_errors(self, n_bins: int, std: float = 0.1) -> Dict[str, float]:
        """Quantization error of a standard-normal density on [-5, 5]: uniform vs normal bins."""
        r = TargetRange(-5.0, 5.0)
        return compare_layout_errors(
            _standard_normal,
            {
                "uniform": build_bin_layout(r, n_bins),
                "normal": build_bin_layout(r, n_bins, BinDistribution.normal(0.5, std)),
            },
        )

    def train(self, cfg: ExperimentConfig, seed_index: int = 0) -> RunOutputs:
        """One run; writes the log, metrics, checkpoint and resolved config."""
        out = RunOutputs(self.output_dir)
        ConfigManager().write(cfg, self.output_dir / ConfigManager.RESOLVED_NAME)
        out.files.append(self.output_dir / ConfigManager.RESOLVED_NAME)
        try:
            run = experiments.run_single(cfg, seed_index)
        except DivergenceError as e:
            _write_log(self.output_dir / TRAIN_LOG, e.log)
            raise

        out.files.append(_write_log(self.output_dir / TRAIN_LOG, run.training.log))
        out.files.append(
            fs_utils.write_csv(
                self.output_dir / METRICS,
                experiments.RESULT_FIELDS,
                [run.metrics.as_row()],
            ),
        )
        run.model.metadata.update(
            {"fingerprint": run.metrics.fingerprint, "seed": run.metrics.seed, "mode": cfg.loss.mode},
        )
        out.files.append(save_checkpoint(run.model, self.output_dir / CHECKPOINT))
        out.summary = run.metrics.as_row()
        return out

    def grid(self, cfg: ExperimentConfig) -> RunOutputs:
        out = RunOutputs(self.output_dir)
        rows = experiments.run_grid(cfg)
        path = fs_utils.write_csv(
            self.output_dir / RESULTS,
            experiments.result_fields(cfg),
            [r.as_row() for r in rows],
        )
        out.files.append(path)
        out.summary = {
            "rows": len(rows),
            "failed": sum(r.status != "ok" for r in rows),
        }
        return out

    def check_bounds(self, draws: int, seed: int) -> RunOutputs:
        if draws < 1:
            raise InvalidArgumentError(f"draws must be >= 1, got {draws}")
        out = RunOutputs(self.output_dir)
        result = bounds.run_harness(draws=draws, seed=seed)
        fields = list(result.rows[0])
        out.files.append(fs_utils.write_csv(self.output_dir / BOUNDS, fields, result.rows))
        out.summary = {"summary": result.summary(), **{f"violations_{k}": v for k, v in result.violations.items()}}
        return out

    def calibrate(self, cfg: ExperimentConfig, checkpoint: Optional[Path] = None) -> RunOutputs:
        """Score uncertainty routes of a trained (or loaded) histogram model."""
        out = RunOutputs(self.output_dir)
        if checkpoint is not None:
            model = load_checkpoint(checkpoint)
            data = generate_dataset(cfg.task)
        else:
            run = experiments.run_single(cfg)
            model, data = run.model, run.data
        outcome = experiments.evaluate_uncertainty(cfg, data, model)
        out.files.append(
            fs_utils.write_csv(
                self.output_dir / CALIBRATION,
                experiments.CALIBRATION_FIELDS,
                outcome.summary_rows(),
            ),
        )
        out.files.append(
            fs_utils.write_csv(
                self.output_dir / CALIBRATION_CURVES,
                experiments.CURVE_FIELDS,
                outcome.curve_rows(),
            ),
        )
        out.files.append(
            fs_utils.write_csv(
                self.output_dir / PREDICTIONS,
                PREDICTION_FIELDS,
                [r.as_row() for r in outcome.predictions],
            ),
        )
        out.files.append(plots.plot_calibration(outcome.curve_rows(), self.output_dir / "calibration.svg"))
        out.summary = {row["method"]: row["mace"] for row in outcome.summary_rows()}
        return out

    def plot(self, results_csv: Path) -> RunOutputs:
        out = RunOutputs(self.output_dir)
        out.files.extend(plots.emit_plots(results_csv, self.output_dir))
        return out
