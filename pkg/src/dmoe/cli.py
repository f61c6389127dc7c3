# src/dmoe/cli.py
"""
dmoe CLI (Typer)

Commands:
- layout    : build the base and shifted layouts from a config and print them
- train     : one training run (log, metrics, checkpoint, resolved config)
- grid      : run every grid cell x seed and write results.csv
- bounds    : randomized gradient-bound harness, writes bounds.csv
- calibrate : uncertainty scores and calibration metrics of a DMoE model
- plot      : SVG figures from a results.csv
"""

from __future__ import annotations

import logging
import traceback
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import typer
from rich.console import Console
from rich.logging import RichHandler
from rich.markup import escape
from rich.table import Table

from .config import load_config
from .core import DmoeCore, RunOutputs
from .errors import DmoeError
from .schema import ExperimentConfig

app = typer.Typer(
    add_completion=False,
    help="Histogram regression with distance loss and shifted output heads (DMoE).",
)
console = Console()


# ----------------------------
# Global context
# ----------------------------


class Ctx:
    def __init__(self, verbose: bool):
        self.verbose = verbose


@app.callback()
def main(
    ctx: typer.Context,
    verbose: bool = typer.Option(
        False,
        "--verbose",
        "-v",
        help="Enable debug logs and tracebacks.",
    ),
):
    """Initialize global context and logging. Access via ctx.obj"""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        handlers=[RichHandler(console=console, show_path=False)],
        force=True,
    )
    ctx.obj = Ctx(verbose=verbose)


def _handle_error(e: Exception, verbose: bool) -> None:
    if isinstance(e, DmoeError):
        console.print(f"[bold red]Error:[/bold red] {escape(str(e))}")
    else:
        console.print(f"[bold red]Unexpected error:[/bold red] {e}")
    if verbose:
        console.print("[dim]" + traceback.format_exc() + "[/dim]")
    raise typer.Exit(1)


def _load(config: Optional[Path], overrides: Sequence[str]) -> ExperimentConfig:
    return load_config(config, overrides)


def _out_dir(out_dir: Optional[Path], cfg: ExperimentConfig) -> Path:
    return out_dir if out_dir is not None else Path(cfg.run.output_dir)


def _print_table(title: str, rows: List[Dict[str, Any]]) -> None:
    if not rows:
        console.print(f"[dim]{title}: no rows[/dim]")
        return
    table = Table(title=title)
    for key in rows[0]:
        table.add_column(str(key))
    for row in rows:
        table.add_row(*(f"{v:.6g}" if isinstance(v, float) else str(v) for v in row.values()))
    console.print(table)


def _report(out: RunOutputs) -> None:
    for path in out.files:
        console.print(f"[green]✓[/green] wrote {path}")


ConfigOpt = typer.Option(
    None,
    "--config",
    "-c",
    exists=True,
    dir_okay=False,
    readable=True,
    help="Experiment config (YAML with dotted keys).",
)
SetOpt = typer.Option(
    [],
    "--set",
    "-s",
    help="Override a config key, e.g. layout.n_bins=128. Repeatable.",
)
OutOpt = typer.Option(
    None,
    "--out-dir",
    "-o",
    file_okay=False,
    help="Output directory (default: run.output_dir).",
)


# ----------------------------
# Commands
# ----------------------------


@app.command()
def layout(
    ctx: typer.Context,
    config: Optional[Path] = ConfigOpt,
    overrides: List[str] = SetOpt,
    out: Optional[Path] = typer.Option(
        None,
        "--out",
        dir_okay=False,
        help="Write the base layout in the line-oriented text format.",
    ),
    density: Optional[str] = typer.Option(
        None,
        "--density",
        help="Compare quantization error for a reference density ('normal').",
    ),
):
    """Print the base and shifted layouts."""
    try:
        cfg = _load(config, overrides)
        core = DmoeCore(_out_dir(None, cfg))
        layouts = core.layout(cfg)
        _print_table(
            f"{cfg.layout.bin_distribution} layout, {layouts.n_heads} heads",
            core.layout_rows(layouts),
        )
        if out is not None:
            core.write_layout(layouts, out)
            console.print(f"[green]✓[/green] wrote {out}")
        if density is not None:
            if density != "normal":
                raise typer.BadParameter(f"unknown density: {density}")
            errors = core.normal_density_errors(cfg.layout.n_bins)
            _print_table("quantization error (standard normal)", [errors])
    except typer.BadParameter:
        raise
    except Exception as e:
        _handle_error(e, ctx.obj.verbose)


@app.command()
def train(
    ctx: typer.Context,
    config: Optional[Path] = ConfigOpt,
    overrides: List[str] = SetOpt,
    out_dir: Optional[Path] = OutOpt,
    seed_index: int = typer.Option(0, "--seed-index", help="Seed index of the run."),
):
    """Run one training job."""
    try:
        cfg = _load(config, overrides)
        out = DmoeCore(_out_dir(out_dir, cfg)).train(cfg, seed_index)
        _print_table("test metrics", [{k: out.summary[k] for k in ("mode", "mae", "ewt", "best_epoch")}])
        _report(out)
    except Exception as e:
        _handle_error(e, ctx.obj.verbose)


@app.command()
def grid(
    ctx: typer.Context,
    config: Optional[Path] = ConfigOpt,
    overrides: List[str] = SetOpt,
    out_dir: Optional[Path] = OutOpt,
):
    """Run the ablation grid (grid.* axes x run.n_seeds)."""
    try:
        cfg = _load(config, overrides)
        out = DmoeCore(_out_dir(out_dir, cfg)).grid(cfg)
        console.print(f"{out.summary['rows']} rows, {out.summary['failed']} failed")
        _report(out)
    except Exception as e:
        _handle_error(e, ctx.obj.verbose)


@app.command()
def bounds(
    ctx: typer.Context,
    draws: int = typer.Option(3000, "--draws", help="Number of random draws."),
    seed: int = typer.Option(0, "--seed", help="Harness seed."),
    out_dir: Path = typer.Option(Path("runs"), "--out-dir", "-o", file_okay=False),
):
    """Check the gradient-norm bounds on random models."""
    try:
        out = DmoeCore(out_dir).check_bounds(draws, seed)
        console.print(out.summary["summary"])
        _report(out)
    except Exception as e:
        _handle_error(e, ctx.obj.verbose)


@app.command()
def calibrate(
    ctx: typer.Context,
    config: Optional[Path] = ConfigOpt,
    overrides: List[str] = SetOpt,
    out_dir: Optional[Path] = OutOpt,
    checkpoint: Optional[Path] = typer.Option(
        None,
        "--checkpoint",
        exists=True,
        dir_okay=False,
        help="Score a saved model instead of training one.",
    ),
):
    """Evaluate uncertainty scores and recalibration."""
    try:
        cfg = _load(config, overrides)
        out = DmoeCore(_out_dir(out_dir, cfg)).calibrate(cfg, checkpoint)
        _print_table("MACE by method", [out.summary])
        _report(out)
    except Exception as e:
        _handle_error(e, ctx.obj.verbose)


@app.command()
def plot(
    ctx: typer.Context,
    results: Path = typer.Option(
        ...,
        "--results",
        "-r",
        exists=True,
        dir_okay=False,
        help="results.csv written by `dmoe grid`.",
    ),
    out_dir: Path = typer.Option(Path("plots"), "--out-dir", "-o", file_okay=False),
):
    """Render SVG plots from a results table."""
    try:
        _report(DmoeCore(out_dir).plot(results))
    except Exception as e:
        _handle_error(e, ctx.obj.verbose)


@app.command()
def version() -> None:
    """Print dmoe version."""
    try:
        from importlib.metadata import version as _pkg_version

        typer.echo(f"dmoe {_pkg_version('dmoe')}")
    except Exception:
        typer.echo("dmoe 0.1.0")


def _main() -> None:
    app()


if __name__ == "__main__":
    _main()
