from __future__ import annotations

import json
import sys
from pathlib import Path
from typing import Callable

import click

from config.experiment import ExperimentConfig, check_paths, load_experiment_config
from config.settings import get_settings
from neural.checkpoint import read_header
from pipeline.processor import Processor
from pipeline.report import render_table
from utils.errors import EXIT_CONFIG, EXIT_OK, ConfigError, DVLBeamError, exit_code_for
from utils.logger import setup_root_logger


def _fail(exc: DVLBeamError) -> None:
    click.echo(f"✗ {exc}", err=True)
    sys.exit(exit_code_for(exc))


def _load(config_path: Path | None, out: Path | None, seed: int | None, overrides: tuple[str, ...]) -> ExperimentConfig:
    settings = get_settings()
    path = config_path or settings.default_config
    items = list(overrides)
    # explicit flags win over --set
    if out is not None:
        items.append(f"output_dir={json.dumps(str(out))}")
    if seed is not None:
        items.append(f"seed={seed}")
    return load_experiment_config(path, items)


def experiment_options(fn: Callable) -> Callable:
    """--config / --seed / --set, shared by every subcommand."""

    fn = click.option(
        "--set", "overrides", multiple=True, metavar="KEY=VALUE",
        help="Override a config key, e.g. --set libeamsnet.train.epochs=5 (repeatable).",
    )(fn)
    fn = click.option("--seed", type=click.IntRange(min=0), help="Override the global seed.")(fn)
    return click.option(
        "--config", "config_path", type=click.Path(path_type=Path),
        help="Experiment config (TOML, or a resolved_config.json / report.json).",
    )(fn)


@click.group()
@click.option("--log-level", default=None, help="DEBUG, INFO, WARNING, ... (default: $DVLBEAM_LOG_LEVEL or INFO).")
def cli(log_level: str | None) -> None:
    """DVL missing-beam reconstruction: simulate, train, evaluate."""
    settings = get_settings()
    settings.ensure_dirs()
    setup_root_logger(log_level=log_level or settings.log_level, log_file=settings.log_file)


@cli.command()
@experiment_options
def validate(config_path: Path | None, seed: int | None, overrides: tuple[str, ...]) -> None:
    """Check config schema, value ranges and referenced files.

    \b
    Example:
        dvlbeam validate --config experiments/akit.toml
    """
    try:
        config = _load(config_path, None, seed, overrides)
    except ConfigError as exc:
        click.echo(f"✗ {exc}", err=True)
        sys.exit(EXIT_CONFIG)

    problems = check_paths(config)
    if problems:
        click.echo("✗ invalid config:", err=True)
        for line in problems:
            click.echo(f"  {line}", err=True)
        sys.exit(EXIT_CONFIG)
    click.echo(f"✓ valid ({config_path or get_settings().default_config})")
    sys.exit(EXIT_OK)


@cli.command()
@experiment_options
@click.option("--out", type=click.Path(path_type=Path), help="Output directory (overrides output_dir).")
@click.option("--resume", is_flag=True, help="Skip estimators whose checkpoint and loss CSV exist.")
def train(
    config_path: Path | None,
    seed: int | None,
    overrides: tuple[str, ...],
    out: Path | None,
    resume: bool,
) -> None:
    """Train every configured network; writes checkpoints and loss CSVs.

    \b
    Example:
        dvlbeam train --config experiments/default.toml --set libeamsnet.train.epochs=5
    """

    def progress(epoch: int, train_loss: float, test_loss: float) -> None:
        if epoch == 1 or epoch % 10 == 0:
            click.echo(f"  epoch {epoch:4d}  train {train_loss:.6g}  test {test_loss:.6g}", err=True)

    try:
        processor = Processor(_load(config_path, out, seed, overrides))
        results = processor.train(resume=resume, epoch_callback=progress)
    except DVLBeamError as exc:
        _fail(exc)

    for r in results:
        mark = "↷" if r.skipped else "✓"
        click.echo(f"{mark} {r.kind} → {r.checkpoint} , {r.loss_csv}")


@cli.command(name="eval")
@experiment_options
@click.option("--out", type=click.Path(path_type=Path), help="Output directory (overrides output_dir).")
@click.option("--oracle", is_flag=True, help="Add an Oracle column (true masked beams as predictions).")
@click.argument("checkpoints", nargs=-1, type=click.Path(path_type=Path))
def evaluate(
    config_path: Path | None,
    seed: int | None,
    overrides: tuple[str, ...],
    out: Path | None,
    oracle: bool,
    checkpoints: tuple[Path, ...],
) -> None:
    """Evaluate all strategies on the test sections and write the report.

    \b
    Checkpoints default to <out>/checkpoints/<estimator>.ckpt; explicit
    checkpoint files are matched to estimators by their header.

    \b
    Example:
        dvlbeam eval --config experiments/default.toml --oracle
    """
    try:
        processor = Processor(_load(config_path, out, seed, overrides))
        by_kind = {read_header(p).estimator: p for p in checkpoints}
        report = processor.evaluate(checkpoints=by_kind, oracle=oracle)
    except DVLBeamError as exc:
        _fail(exc)

    click.echo(render_table(report))
    click.echo(f"\nReports: {processor.reports_dir}")


@cli.command()
@experiment_options
@click.option("--out", type=click.Path(path_type=Path), help="CSV destination (overrides dataset.synthetic.output_dir).")
def simulate(
    config_path: Path | None,
    seed: int | None,
    overrides: tuple[str, ...],
    out: Path | None,
) -> None:
    """Write synthetic, error-model-corrupted sections as dataset CSVs.

    \b
    Example:
        dvlbeam simulate --set dataset.synthetic.profile=turn --out data/turn
    """
    try:
        processor = Processor(_load(config_path, None, seed, overrides))
        paths = processor.simulate(out)
    except DVLBeamError as exc:
        _fail(exc)

    for path in paths:
        click.echo(f"✓ {path}")


def main() -> None:
    cli()


if __name__ == "__main__":
    main()
