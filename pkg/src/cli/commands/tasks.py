"""``gen-tasks``: materialize the task suite description and a preview."""

import click

from src.cli.options import common_options, handle_errors, make_pipeline, resolve_config


@click.command("gen-tasks")
@common_options
@click.option("--preview", type=int, default=5, show_default=True, help="Examples per task")
@handle_errors("gen-tasks")
def gen_tasks(**params) -> None:
    """Write the seeded task specs and example previews into <run>/tasks."""
    config = resolve_config(params)
    specs = make_pipeline(config).gen_tasks(params["preview"])
    for spec in specs:
        click.echo(f"{spec.task_id}\t{spec.kind}\tprompt_len={spec.prompt_len}")
