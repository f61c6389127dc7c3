"""Tests for CLI commands."""

import tempfile
from pathlib import Path

import pytest
from typer.testing import CliRunner

from dmoe.cli import app
from dmoe.utils import fs_utils


@pytest.fixture
def temp_dir():
    """Create temporary directory for testing."""
    with tempfile.TemporaryDirectory() as tmpdir:
        yield Path(tmpdir)


@pytest.fixture
def runner():
    """Create CLI test runner."""
    return CliRunner()


@pytest.fixture
def small_config(temp_dir):
    """A tiny linear-task config file."""
    path = temp_dir / "small.yaml"
    path.write_text(
        "\n".join(
            [
                "task.generator: linear",
                "task.input_dim: 1",
                "task.n_train: 64",
                "task.n_val: 48",
                "task.n_test: 32",
                "task.y_min: 0.0",
                "task.y_max: 1.0",
                "model.hidden: [8]",
                "layout.n_bins: 16",
                "layout.n_heads: 2",
                "train.max_epochs: 2",
                "train.batch_size: 32",
                f"run.output_dir: {temp_dir / 'runs'}",
                "",
            ],
        ),
    )
    return path


def test_version_command(runner):
    """Test version command."""
    result = runner.invoke(app, ["version"])
    assert result.exit_code == 0
    assert "dmoe 0.1.0" in result.stdout


@pytest.mark.parametrize(
    "command,text",
    [
        ("layout", "Print the base and shifted layouts."),
        ("train", "Run one training job."),
        ("grid", "Run the ablation grid"),
        ("bounds", "Check the gradient-norm bounds"),
        ("calibrate", "Evaluate uncertainty scores and recalibration."),
        ("plot", "Render SVG plots from a results table."),
    ],
)
def test_command_help(runner, command, text):
    """Test each command's help text."""
    result = runner.invoke(app, [command, "--help"])
    assert result.exit_code == 0
    assert text in result.stdout


def test_layout_command_writes_text(runner, temp_dir, small_config):
    """Test layout prints a table and writes the base layout."""
    out = temp_dir / "layout.txt"
    result = runner.invoke(app, ["layout", "-c", str(small_config), "--out", str(out)])
    assert result.exit_code == 0, result.stdout
    text = out.read_text()
    assert text.startswith("range 0.0 1.0")
    assert "endpoints" in text


def test_layout_density_comparison(runner, small_config):
    """Test the normal-density quantization comparison prints both layouts."""
    result = runner.invoke(app, ["layout", "-c", str(small_config), "--density", "normal"])
    assert result.exit_code == 0, result.stdout
    assert "quantization error" in result.stdout


def test_train_command(runner, temp_dir, small_config):
    """Test train writes the config, log, metrics and checkpoint."""
    out = temp_dir / "run1"
    result = runner.invoke(app, ["train", "-c", str(small_config), "-o", str(out)])
    assert result.exit_code == 0, result.stdout
    for name in ("config.resolved.yaml", "train_log.csv", "metrics.csv", "checkpoint.npz"):
        assert (out / name).exists(), name
    header, rows = fs_utils.read_csv(out / "metrics.csv")
    assert rows[0]["mode"] == "dmoe"


def test_set_override(runner, temp_dir, small_config):
    """Test --set overrides a config value."""
    out = temp_dir / "run2"
    result = runner.invoke(
        app, ["train", "-c", str(small_config), "-s", "loss.mode=l1", "-o", str(out)],
    )
    assert result.exit_code == 0, result.stdout
    _, rows = fs_utils.read_csv(out / "metrics.csv")
    assert rows[0]["mode"] == "l1"


def test_invalid_override_exits_nonzero(runner, small_config):
    """Test validation errors exit with code 1."""
    result = runner.invoke(app, ["train", "-c", str(small_config), "-s", "layout.n_bins=1"])
    assert result.exit_code == 1
    assert "Error:" in result.stdout


def test_grid_and_plot(runner, temp_dir, small_config):
    """Test grid writes results.csv and plot renders it."""
    out = temp_dir / "grid"
    result = runner.invoke(
        app, ["grid", "-c", str(small_config), "-s", "grid.loss.mode=[l1, dmoe]", "-o", str(out)],
    )
    assert result.exit_code == 0, result.stdout
    assert "2 rows, 0 failed" in result.stdout
    header, rows = fs_utils.read_csv(out / "results.csv")
    assert header[-1] == "loss.mode"

    plots = temp_dir / "plots"
    result = runner.invoke(app, ["plot", "-r", str(out / "results.csv"), "-o", str(plots)])
    assert result.exit_code == 0, result.stdout
    for name in ("results_mae.svg", "results_ewt.svg", "distance_bias.svg"):
        assert (plots / name).exists()


def test_bounds_command(runner, temp_dir):
    """Test bounds writes one row per draw."""
    result = runner.invoke(app, ["bounds", "--draws", "6", "-o", str(temp_dir)])
    assert result.exit_code == 0, result.stdout
    assert "6 draws" in result.stdout
    _, rows = fs_utils.read_csv(temp_dir / "bounds.csv")
    assert len(rows) == 6


def test_calibrate_from_checkpoint(runner, temp_dir, small_config):
    """Test calibrate scores a saved checkpoint."""
    out = temp_dir / "run3"
    assert runner.invoke(app, ["train", "-c", str(small_config), "-o", str(out)]).exit_code == 0
    result = runner.invoke(
        app,
        ["calibrate", "-c", str(small_config), "--checkpoint", str(out / "checkpoint.npz"), "-o", str(out)],
    )
    assert result.exit_code == 0, result.stdout
    _, rows = fs_utils.read_csv(out / "calibration.csv")
    assert {r["method"] for r in rows} >= {"entropy", "kl", "histogram"}
    assert (out / "calibration.svg").exists()
    _, preds = fs_utils.read_csv(out / "predictions.csv")
    assert len(preds) == 32


def test_plot_malformed_csv(runner, temp_dir):
    """Test a malformed results file reports the line number."""
    bad = temp_dir / "bad.csv"
    bad.write_text("status,mode,mae,ewt\nok,dmoe,0.1\n")
    result = runner.invoke(app, ["plot", "-r", str(bad), "-o", str(temp_dir / "p")])
    assert result.exit_code == 1
    assert "line 2" in result.stdout


def test_global_verbose_option(runner):
    """Test global verbose option."""
    result = runner.invoke(app, ["--verbose", "version"])
    assert result.exit_code == 0
