# src/dmoe/plots.py
"""
Static SVG figures: ablation bars, calibration curves and the
histogram-distance-bias demonstration.

Figures are drawn on the Agg canvas with a fixed SVG hash salt, text kept as
text and no date metadata, so identical inputs give identical bytes.
"""

from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Mapping, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")

from matplotlib.figure import Figure  # noqa: E402

from .experiments import RESULT_FIELDS, distance_bias_fixture  # noqa: E402
from .hist_targets import BinLayout  # noqa: E402
from .loss import distance_loss, histogram_loss  # noqa: E402
from .utils import fs_utils  # noqa: E402

logger = logging.getLogger(__name__)

SVG_RC = {
    "svg.hashsalt": "dmoe",
    "svg.fonttype": "none",
    "path.simplify": True,
}
SVG_METADATA = {"Date": None}


def _save(fig: Figure, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with matplotlib.rc_context(SVG_RC):
        fig.savefig(path, format="svg", metadata=SVG_METADATA)
    return path


def _cell_label(row: Mapping[str, Any], axes: Sequence[str]) -> str:
    if not axes:
        return str(row.get("mode", ""))
    return "\n".join(f"{a.rsplit('.', 1)[-1]}={row.get(a)}" for a in axes)


def summarize_rows(
    rows: Sequence[Mapping[str, Any]],
    axes: Sequence[str],
    metric: str,
) -> List[Tuple[str, float, float]]:
    """(label, mean, std) of ``metric`` per cell, in first-seen order, ok rows only."""
    groups: Dict[str, List[float]] = {}
    for row in rows:
        if row.get("status", "ok") != "ok":
            continue
        value = row.get(metric)
        if not isinstance(value, (int, float)) or not math.isfinite(value):
            continue
        groups.setdefault(_cell_label(row, axes), []).append(float(value))
    out = []
    for label, values in groups.items():
        mean = sum(values) / len(values)
        var = sum((v - mean) ** 2 for v in values) / len(values)
        out.append((label, mean, math.sqrt(var)))
    return out


def plot_results(
    rows: Sequence[Mapping[str, Any]],
    axes: Sequence[str],
    metric: str,
    path: Path,
) -> Path:
    """Bar per grid cell (mean over seeds, std as error bar)."""
    with matplotlib.rc_context(SVG_RC):
        fig = Figure(figsize=(6.4, 4.0))
        ax = fig.add_subplot()
        summary = summarize_rows(rows, axes, metric)
        if summary:
            labels, means, stds = zip(*summary)
            xs = list(range(len(labels)))
            ax.bar(xs, means, yerr=stds, color="#4477aa", capsize=3)
            ax.set_xticks(xs)
            ax.set_xticklabels(labels, fontsize=7)
        ax.set_ylabel(metric)
        ax.set_title(f"{metric} by configuration")
        fig.tight_layout()
    return _save(fig, path)


def plot_calibration(curve_rows: Sequence[Mapping[str, Any]], path: Path) -> Path:
    """Observed vs expected coverage per method, with the diagonal."""
    with matplotlib.rc_context(SVG_RC):
        fig = Figure(figsize=(4.8, 4.8))
        ax = fig.add_subplot()
        ax.plot([0, 1], [0, 1], color="#999999", linestyle="--", linewidth=1)
        curves: Dict[str, Tuple[List[float], List[float]]] = {}
        for row in curve_rows:
            qs, obs = curves.setdefault(str(row["method"]), ([], []))
            qs.append(float(row["level"]))
            obs.append(float(row["observed"]))
        for method, (qs, obs) in curves.items():
            ax.plot(qs, obs, linewidth=1.2, label=method)
        if curves:
            ax.legend(fontsize=7)
        ax.set_xlabel("expected coverage")
        ax.set_ylabel("observed coverage")
        fig.tight_layout()
    return _save(fig, path)


def plot_distance_bias(path: Path) -> Path:
    """Near and far predictions with equal histogram loss, annotated with HL/DL."""
    fx = distance_bias_fixture()
    layout: BinLayout = fx["layout"]
    with matplotlib.rc_context(SVG_RC):
        fig = Figure(figsize=(7.2, 3.2))
        axs = fig.subplots(1, 2, sharey=True)
        for ax, name in zip(axs, ("near", "far")):
            pred = fx[name]
            hl = histogram_loss(pred, fx["target"])
            dl = distance_loss(pred, layout, fx["y"])
            ax.bar(
                layout.centers,
                fx["target"].probs,
                width=layout.widths,
                color="#dddddd",
                edgecolor="#777777",
                label="target",
            )
            ax.bar(
                layout.centers,
                pred,
                width=0.6 * layout.widths,
                color="#cc6677",
                label="prediction",
            )
            ax.axvline(fx["y"], color="black", linewidth=1)
            ax.set_title(f"{name}: HL={hl:.4f}  DL={dl:.4f}", fontsize=9)
            ax.set_xlabel("y")
        axs[0].set_ylabel("probability")
        axs[0].legend(fontsize=7)
        fig.tight_layout()
    return _save(fig, path)


def emit_plots(results_csv: Path, out_dir: Path, metrics: Sequence[str] = ("mae", "ewt")) -> List[Path]:
    """Ablation bars for each metric plus the distance-bias figure."""
    header, rows = fs_utils.read_csv(results_csv, required=("status", "mode", *metrics))
    fixed = set(RESULT_FIELDS)
    axes = [c for c in header if c not in fixed]
    paths = [plot_results(rows, axes, m, out_dir / f"results_{m}.svg") for m in metrics]
    paths.append(plot_distance_bias(out_dir / "distance_bias.svg"))
    logger.debug("wrote %d plots to %s", len(paths), out_dir)
    return paths

