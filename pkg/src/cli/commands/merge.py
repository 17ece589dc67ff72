"""``merge``, ``analyze-importance`` and ``sweep``."""

import click

from src.cli.options import (
    common_options,
    handle_errors,
    make_pipeline,
    merge_options,
    parse_floats,
    resolve_config,
)
from src.pipeline import ABLATIONS, SWEEP_AXES
from src.reporting import importance_stage_kind_table


@click.command("merge")
@common_options
@merge_options
@handle_errors("merge")
def merge(**params) -> None:
    """Merge the experts with one method; expert-pp runs expert first and refines it."""
    config = resolve_config(params)
    pipeline = make_pipeline(config)
    method = config.merge.method
    merged = pipeline.merge(method)
    click.echo(f"{method}\t{merged.fingerprint()}\t{pipeline.store.path('merges', method)}")


@click.command("analyze-importance")
@common_options
@merge_options
@click.option("--raw", is_flag=True, help="Full-precision numbers instead of 6 significant digits")
@handle_errors("analyze-importance")
def analyze_importance(**params) -> None:
    """Importance by stage and submodule from the stage-1 coefficients."""
    pipeline = make_pipeline(resolve_config(params), replace_merges=False)
    report = pipeline.importance(params["raw"])
    click.echo(importance_stage_kind_table(report).to_text(params["raw"]), nl=False)


@click.command("sweep")
@common_options
@merge_options
@click.option("--axis", type=click.Choice(list(SWEEP_AXES)), required=True, help="Swept axis")
@click.option("--values", "values_text", required=True, help="Comma-separated values")
@click.option(
    "--methods", "methods_text", help="Merge methods of each seed run [default: the config's]"
)
@click.option(
    "--ablations",
    "ablations_text",
    help=f"Ablation variants of each seed run, from {','.join(ABLATIONS)}",
)
@click.option("--no-mixture", is_flag=True, help="Skip the mixture comparator in seed runs")
@click.option("--raw", is_flag=True, help="Full-precision numbers instead of 6 significant digits")
@handle_errors("sweep")
def sweep(**params) -> None:
    """
    Merge and evaluate once per value of γ or of the calibration-sample count.

    With ``--axis seed`` every value is a root seed: the whole run is
    repeated per seed and ``sweep_seed.csv`` gains a mean row.
    """
    extra = {}
    if params["methods_text"]:
        extra["methods"] = params["methods_text"].split(",")
    if params["ablations_text"]:
        extra["ablations"] = params["ablations_text"].split(",")
    if params["no_mixture"]:
        extra["include_mixture"] = False
    config = resolve_config(params, extra=extra)
    values = parse_floats(params["values_text"], "--values") or []
    pipeline = make_pipeline(config)
    paths = pipeline.sweep(params["axis"], values, config.merge.method, params["raw"])
    text = [p for p in paths if p.suffix == ".txt"]
    if text:
        click.echo(text[0].read_text(encoding="utf-8"), nl=False)
