"""Command-line entry point.

Reports go to stdout (or --output); logs go to stderr. Exit codes: 0 success,
1 input error, 2 invariant violation.
"""
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence

import click

from config import ALPHA_GRID, RunConfig, load_controller_config
from errors import InvariantViolation, TrajectoryError
from operations import (ALPHA_COLUMNS, CLASSIFY_COLUMNS, CORRELATION_COLUMNS, FEATURE_COLUMNS, FOLD_COLUMNS,
                        PDI_COLUMNS, WEIGHT_COLUMNS, CorpusOperations)
from reports import render_table
from utils.terms import PdiMode

logger = logging.getLogger(__name__)

COHORT_TABLES = {
    "agreement": ["model_i", "model_j", "agreement"],
    "pass-gain": ["model_id", "group", "pass_gain_rate"],
    "quadrants": ["plan_level", "exec_level", "n_tasks", "mean_gain", "mean_gap"],
    "attempt-bins": ["model_id", "k", "mean_gain", "n_tasks"],
    "pairs": ["model_id", "task_id", "pdi", "gain"],
}


def configure_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def emit(ctx: click.Context, rows: Sequence[Mapping[str, Any]], columns: Sequence[str],
         extra: Optional[Dict[str, str]] = None) -> None:
    ops: CorpusOperations = ctx.obj["ops"]
    fingerprint = {**ops.config.fingerprint(), **(extra or {})}
    text = render_table(rows, columns, fingerprint, ops.config.output_format)
    output: Optional[Path] = ctx.obj["output"]
    if output is None:
        click.echo(text, nl=False)
    else:
        output.write_text(text, encoding="utf-8")
        logger.info("wrote %d rows to %s", len(rows), output)


def corpus_ops(ctx: click.Context, corpus_dir: Path) -> CorpusOperations:
    ops: CorpusOperations = ctx.obj["ops"]
    ops.load_corpus(corpus_dir)
    return ops


@click.group()
@click.option("--alpha", type=float, default=None, help="Smoothing pseudo-count (default 0.002 or PDI_ALPHA).")
@click.option("--seed", type=int, default=None, help="Seed for cross-validation folds.")
@click.option("--format", "output_format", type=click.Choice(["csv", "json"]), default="csv")
@click.option("--workers", type=int, default=None, help="Worker threads for corpus loading and analysis.")
@click.option("--skip-invalid", is_flag=True, help="Warn about and skip invalid bundles instead of failing.")
@click.option("--controller-config", type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None,
              help="YAML file with tau, warmup_W and reference_stats.")
@click.option("--output", "-o", type=click.Path(dir_okay=False, path_type=Path), default=None)
@click.option("--verbose", "-v", is_flag=True)
@click.pass_context
def cli(ctx, alpha, seed, output_format, workers, skip_invalid, controller_config, output, verbose):
    """Exploration trajectory analytics over bundle corpora."""
    configure_logging(verbose)
    overrides = dict(alpha=alpha, seed=seed, output_format=output_format, workers=workers,
                     skip_invalid=skip_invalid)
    if controller_config is not None:
        overrides["controller"] = load_controller_config(controller_config)
    ctx.obj = {"ops": CorpusOperations(RunConfig.from_env(**overrides)), "output": output}


@cli.command()
@click.argument("corpus_dir", type=click.Path(path_type=Path))
@click.pass_context
def analyze(ctx, corpus_dir):
    """Per-task PDI with median-split group labels."""
    rows, summary = corpus_ops(ctx, corpus_dir).analyze()
    emit(ctx, rows, PDI_COLUMNS, summary)


@cli.command()
@click.argument("corpus_dir", type=click.Path(path_type=Path))
@click.pass_context
def features(ctx, corpus_dir):
    """Exploration, memo and skill features per task."""
    emit(ctx, corpus_ops(ctx, corpus_dir).features(), FEATURE_COLUMNS)


@cli.command()
@click.argument("corpus_dir", type=click.Path(path_type=Path))
@click.pass_context
def classify(ctx, corpus_dir):
    """Convergent / Divergent labels from the memo similarity trend."""
    emit(ctx, corpus_ops(ctx, corpus_dir).classify(), CLASSIFY_COLUMNS)


@cli.command()
@click.argument("features_csv", type=click.Path(path_type=Path))
@click.argument("outcomes_csv", type=click.Path(path_type=Path))
@click.pass_context
def correlate(ctx, features_csv, outcomes_csv):
    """Spearman of every feature column against outcomes (task_id, [model_id], outcome)."""
    ops: CorpusOperations = ctx.obj["ops"]
    emit(ctx, ops.correlate(features_csv, outcomes_csv), CORRELATION_COLUMNS)


@cli.command("sweep-alpha")
@click.argument("corpus_dir", type=click.Path(path_type=Path))
@click.option("--outcomes", type=click.Path(path_type=Path), default=None,
              help="Outcomes CSV; defaults to skill gains recorded in the bundles.")
@click.option("--alphas", type=str, default=None, help="Comma-separated alpha values.")
@click.pass_context
def sweep_alpha(ctx, corpus_dir, outcomes, alphas):
    """PDI-outcome correlation across smoothing values."""
    grid = ALPHA_GRID if alphas is None else tuple(float(a) for a in alphas.split(",") if a.strip())
    emit(ctx, corpus_ops(ctx, corpus_dir).sweep_alpha(grid, outcomes), ALPHA_COLUMNS)


@cli.command("sweep-weights")
@click.argument("corpus_dir", type=click.Path(path_type=Path))
@click.option("--outcomes", type=click.Path(path_type=Path), default=None)
@click.option("--ablation", is_flag=True, help="Drop one component at a time instead of the full grid.")
@click.option("--cv", "folds", type=int, default=None, help="k-fold cross-validation of fitted weights.")
@click.option("--by-model", is_flag=True, help="Leave one model out per fold.")
@click.pass_context
def sweep_weights(ctx, corpus_dir, outcomes, ablation, folds, by_model):
    """Correlation of weighted PDI composites with outcomes."""
    ops = corpus_ops(ctx, corpus_dir)
    if folds is not None or by_model:
        emit(ctx, ops.cross_validate(outcomes, k=folds or 5, by_model=by_model), FOLD_COLUMNS)
    else:
        emit(ctx, ops.sweep_weights(outcomes, ablation=ablation), WEIGHT_COLUMNS)


@cli.command()
@click.argument("corpus_dir", type=click.Path(path_type=Path))
@click.argument("table", type=click.Choice(sorted(COHORT_TABLES)))
@click.option("--model", type=str, default=None, help="Student model for the quadrant table.")
@click.pass_context
def cohort(ctx, corpus_dir, table, model):
    """Cross-model tables over the evaluation records in the bundles."""
    ops = corpus_ops(ctx, corpus_dir)
    if table == "quadrants":
        if model is None:
            raise click.UsageError("quadrants needs --model")
        rows, warnings = ops.quadrants(model)
        for warning in warnings:
            logger.warning("%s", warning)
        emit(ctx, rows, COHORT_TABLES[table], {"model": model})
        return
    build = {"agreement": ops.agreement, "pass-gain": ops.pass_gain,
             "attempt-bins": ops.attempt_bins, "pairs": ops.pairs}[table]
    emit(ctx, build(), COHORT_TABLES[table])


@cli.command()
@click.argument("scenario", type=click.Path(path_type=Path))
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), default=None,
              help="Directory to write the resulting bundle to.")
@click.option("--pdi-mode", type=click.Choice([m.value for m in PdiMode]), default=None)
@click.pass_context
def simulate(ctx, scenario, out_dir, pdi_mode):
    """Run a scripted scenario; the controller event log goes to stdout as JSON lines."""
    ops: CorpusOperations = ctx.obj["ops"]
    result = ops.simulate(scenario, out_dir, PdiMode(pdi_mode) if pdi_mode else None)
    log = result.event_log()
    if out_dir is not None:
        (out_dir / "events.jsonl").write_text(log, encoding="utf-8")
    output: Optional[Path] = ctx.obj["output"]
    if output is None:
        click.echo(log, nl=False)
    else:
        output.write_text(log, encoding="utf-8")


@cli.command()
@click.argument("corpus_dir", type=click.Path(path_type=Path))
@click.pass_context
def calibrate(ctx, corpus_dir):
    """Fit controller reference stats on completed bundles (YAML)."""
    text = corpus_ops(ctx, corpus_dir).calibrate()
    output: Optional[Path] = ctx.obj["output"]
    if output is None:
        click.echo(text, nl=False)
    else:
        output.write_text(text, encoding="utf-8")


def main(argv: Optional[List[str]] = None) -> int:
    try:
        cli.main(args=argv, prog_name="pdi", standalone_mode=False)
    except TrajectoryError as e:
        click.echo(f"error: {e}", err=True)
        return e.exit_code
    except click.ClickException as e:
        e.show()
        return 1
    except click.Abort:
        return 1
    except Exception as e:
        # anything else is an internal error (exit code 2)
        logger.exception("unexpected error")
        click.echo(f"error: internal error: {type(e).__name__}: {e}", err=True)
        return InvariantViolation.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
