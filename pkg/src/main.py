"""``expert-merge`` command-line entry point."""

import logging
import sys

import click
import structlog
import torch

import src
from src.cli.commands import ALL_COMMANDS
from src.config import Settings, get_settings


def configure_logging(settings: Settings) -> None:
    """Structured logs on stderr; stdout is reserved for command output."""
    logging.basicConfig(
        format="%(message)s",
        stream=sys.stderr,
        level=getattr(logging, settings.log_level.upper(), logging.INFO),
    )
    renderer = (
        structlog.processors.JSONRenderer()
        if settings.log_json
        else structlog.dev.ConsoleRenderer(colors=False)
    )
    structlog.configure(
        processors=[
            structlog.stdlib.filter_by_level,
            structlog.stdlib.add_logger_name,
            structlog.stdlib.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            renderer,
        ],
        wrapper_class=structlog.stdlib.BoundLogger,
        context_class=dict,
        logger_factory=structlog.stdlib.LoggerFactory(),
        cache_logger_on_first_use=True,
    )


def configure_torch(settings: Settings) -> None:
    """Fixed intra-op thread count and deterministic kernels for bitwise-reproducible runs."""
    torch.set_num_threads(settings.torch_threads)
    torch.use_deterministic_algorithms(True)


@click.group()
@click.version_option(src.__version__, prog_name="expert-merge")
def cli() -> None:
    """Learned-coefficient merging of task experts on a tiny transformer."""
    settings = get_settings()
    configure_logging(settings)
    configure_torch(settings)
    structlog.get_logger(__name__).debug(
        "Starting expert-merge", environment=settings.app_env, threads=settings.torch_threads
    )


for command in ALL_COMMANDS:
    cli.add_command(command)


if __name__ == "__main__":
    cli()
