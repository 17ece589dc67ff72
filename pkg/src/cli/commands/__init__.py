"""Subcommands of the ``expert-merge`` CLI."""

from src.cli.commands.evaluate import evaluate, report
from src.cli.commands.merge import analyze_importance, merge, sweep
from src.cli.commands.run import run
from src.cli.commands.tasks import gen_tasks
from src.cli.commands.train import train_base, train_expert, train_mixture

ALL_COMMANDS = [
    gen_tasks,
    train_base,
    train_expert,
    train_mixture,
    merge,
    analyze_importance,
    evaluate,
    report,
    run,
    sweep,
]

__all__ = ["ALL_COMMANDS"]
