"""Training commands: base pretraining, expert SFT and mixture training."""

import click

from src.cli.options import (
    common_options,
    handle_errors,
    make_pipeline,
    resolve_config,
    train_options,
)


@click.command("train-base")
@common_options
@train_options
@handle_errors("base")
def train_base(**params) -> None:
    """Pretrain the shared base on task prompts and random sequences."""
    pipeline = make_pipeline(resolve_config(params, train_target="base_hyper"))
    params_ = pipeline.base()
    click.echo(f"base\t{params_.fingerprint()}\t{pipeline.store.path('base')}")


@click.command("train-expert")
@common_options
@train_options
@click.option("--task", "task_ids", multiple=True, help="Task to train [default: every task]")
@handle_errors("expert")
def train_expert(**params) -> None:
    """Fine-tune one expert per task from the base; fails below the accuracy threshold."""
    config = resolve_config(params, train_target="expert_hyper")
    pipeline = make_pipeline(config)
    wanted = set(params["task_ids"]) or set(config.task_ids)
    for spec in config.tasks:
        if spec.task_id in wanted:
            expert = pipeline.expert(spec)
            click.echo(f"expert:{spec.task_id}\t{expert.fingerprint()}")


@click.command("train-mixture")
@common_options
@train_options
@handle_errors("mixture")
def train_mixture(**params) -> None:
    """Fine-tune the base on the union of all task data (comparator)."""
    pipeline = make_pipeline(resolve_config(params, train_target="mixture_hyper"))
    click.echo(f"mixture\t{pipeline.mixture().fingerprint()}")
