"""``eval`` and ``report``."""

from pathlib import Path

import click

from src.cli.options import (
    common_options,
    handle_errors,
    make_pipeline,
    merge_options,
    resolve_config,
)
from src.exceptions import CheckpointError
from src.reporting import results_table
from src.tasks import EvalResult


@click.command("eval")
@common_options
@merge_options
@click.option(
    "--model",
    "models",
    multiple=True,
    help="base, mixture, expert:<task> or a merge method [default: every model of the run]",
)
@click.option("--tasks", "tasks_text", help="Comma-separated task subset [default: all]")
@click.option("--raw", is_flag=True, help="Full-precision numbers instead of 6 significant digits")
@handle_errors("eval")
def evaluate(**params) -> None:
    """Exact-match accuracy with greedy decoding on the seeded test split."""
    pipeline = make_pipeline(resolve_config(params), replace_merges=False)
    labels = list(params["models"]) or pipeline.labels()
    task_ids = params["tasks_text"].split(",") if params["tasks_text"] else None
    results = [(label, pipeline.evaluate(label, task_ids)) for label in labels]
    click.echo(results_table(results).to_text(params["raw"]), nl=False)


def _saved_results(run_dir: Path) -> list[tuple[str, EvalResult]]:
    results = []
    for path in sorted(run_dir.glob("eval/*/result.json")):
        try:
            result = EvalResult.model_validate_json(path.read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise CheckpointError(f"Cannot read {path}: {exc}") from exc
        results.append((f"{run_dir.name}/{path.parent.name}", result))
    return results


@click.command("report")
@common_options
@merge_options
@click.option("--models", "models_text", help="Comma-separated model labels [default: the run's]")
@click.option(
    "--from-run",
    "runs",
    multiple=True,
    type=click.Path(exists=True, file_okay=False, path_type=Path),
    help="Compose saved evaluations of other run directories instead",
)
@click.option("--name", default="results", show_default=True, help="Report file stem")
@click.option("--raw", is_flag=True, help="Full-precision numbers instead of 6 significant digits")
@handle_errors("report")
def report(**params) -> None:
    """Results table (CSV + aligned text) over methods and tasks."""
    pipeline = make_pipeline(resolve_config(params), replace_merges=False)
    if params["runs"]:
        results = [r for run in params["runs"] for r in _saved_results(run)]
    else:
        labels = params["models_text"].split(",") if params["models_text"] else pipeline.labels()
        results = [(label, pipeline.evaluate(label)) for label in labels]
    paths = pipeline.report(results, name=params["name"], raw=params["raw"])
    click.echo(paths[1].read_text(encoding="utf-8"), nl=False)
