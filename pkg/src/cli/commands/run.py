"""``run``: every stage of the pipeline in order."""

import sys

import click

from src.cli.options import common_options, handle_errors, merge_options, resolve_config
from src.config import get_settings
from src.pipeline import ABLATIONS, MERGE_METHODS, run_pipeline


@click.command("run")
@common_options
@merge_options
@click.option(
    "--methods", "methods_text", help=f"Merge methods [default: {','.join(MERGE_METHODS)}]"
)
@click.option(
    "--ablations", "ablations_text", help=f"Ablation variants from {','.join(ABLATIONS)}"
)
@click.option("--no-mixture", is_flag=True, help="Skip the mixture-training comparator")
@click.option("--raw", is_flag=True, help="Full-precision numbers instead of 6 significant digits")
@handle_errors("run")
def run(**params) -> None:
    """Tasks, base, experts, merges, importance, evaluation and the results report."""
    extra = {}
    if params["methods_text"]:
        extra["methods"] = params["methods_text"].split(",")
    if params["ablations_text"]:
        extra["ablations"] = params["ablations_text"].split(",")
    if params["no_mixture"]:
        extra["include_mixture"] = False
    config = resolve_config(params, extra=extra)
    result = run_pipeline(config, get_settings(), raw=params["raw"])
    if result.status != 0:
        click.echo(result.error, err=True)
        sys.exit(result.status)
    for path in result.artifacts:
        if path.suffix == ".txt":
            click.echo(path.read_text(encoding="utf-8"), nl=False)
