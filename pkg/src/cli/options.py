"""Shared click options and their translation into RunConfig overrides."""

import functools
import sys
from collections.abc import Callable
from pathlib import Path
from typing import Any

import click
import structlog
from pydantic import BaseModel

from src.config import get_settings
from src.exceptions import ConfigError, ExpertMergeError
from src.merging import AlignConfig, DareConfig, PlusPlusConfig, TiesConfig
from src.pipeline import MERGE_METHODS, MergeSettings, Pipeline, RunConfig, load_run_config
from src.tasks import TrainHyper

logger = structlog.get_logger(__name__)


def default_of(model: type[BaseModel], name: str) -> str:
    info = model.model_fields[name]
    value = info.default_factory() if info.default_factory is not None else info.default
    if isinstance(value, list):
        return ",".join(str(v) for v in value)
    return "auto" if value is None else str(value)


REFERENCE = "reference setting of the method"
DESK = "desk-scale choice, no reference value"


def _help(text: str, model: type[BaseModel], name: str, source: str = DESK) -> str:
    """Flag help ending in its default and where that default comes from."""
    return f"{text} [default: {default_of(model, name)}; {source}]"


def parse_floats(text: str | None, what: str) -> list[float] | None:
    if text is None:
        return None
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"{what} must be comma-separated numbers, got {text!r}") from None


def parse_ints(text: str | None, what: str) -> list[int] | None:
    values = parse_floats(text, what)
    if values is None:
        return None
    if any(v != int(v) for v in values):
        raise ConfigError(f"{what} must be integers, got {text!r}")
    return [int(v) for v in values]


def parse_betas(text: str | None, task_ids: list[str]) -> list[float] | None:
    """``modadd=2,parity=0.5`` -> weights in task order; unnamed tasks keep 1."""
    if text is None:
        return None
    weights = dict.fromkeys(task_ids, 1.0)
    for part in text.split(","):
        key, sep, value = part.partition("=")
        if not sep or key.strip() not in weights:
            raise ConfigError(f"Task weight {part!r} must be task=value for a known task")
        try:
            weights[key.strip()] = float(value)
        except ValueError:
            raise ConfigError(f"Task weight {part!r} is not a number") from None
    return [weights[t] for t in task_ids]


def _set(target: dict[str, Any], path: str, value: Any) -> None:
    if value is None:
        return
    keys = path.split(".")
    for key in keys[:-1]:
        target = target.setdefault(key, {})
    target[keys[-1]] = value


def _apply(func: Callable, options: list[Callable]) -> Callable:
    for option in reversed(options):
        func = option(func)
    return func


def common_options(func: Callable) -> Callable:
    return _apply(
        func,
        [
            click.option(
                "--config",
                "config_path",
                type=click.Path(exists=True, dir_okay=False, path_type=Path),
                help="YAML run config; flags override its values",
            ),
            click.option(
                "--out",
                "output_dir",
                type=click.Path(file_okay=False, path_type=Path),
                help="Run directory [default: <OUTPUT_DIR>/default]",
            ),
            click.option(
                "--seed",
                type=int,
                help=_help("Root seed for every random stream", RunConfig, "seed"),
            ),
        ],
    )


def train_options(func: Callable) -> Callable:
    return _apply(
        func,
        [
            click.option(
                "--steps",
                "train_steps",
                type=int,
                help=_help("Optimizer steps", TrainHyper, "steps"),
            ),
            click.option(
                "--lr", "train_lr", type=float, help=_help("AdamW step size", TrainHyper, "lr")
            ),
            click.option(
                "--batch-size",
                type=int,
                help=_help("Sequences per step", TrainHyper, "batch_size"),
            ),
            click.option(
                "--threshold",
                type=float,
                help=_help("Minimum own-task accuracy", TrainHyper, "accuracy_threshold"),
            ),
        ],
    )


def merge_options(func: Callable) -> Callable:
    return _apply(
        func,
        [
            click.option(
                "--method",
                type=click.Choice(list(MERGE_METHODS)),
                help=_help("Merge method", MergeSettings, "method"),
            ),
            click.option(
                "--lambda",
                "lambdas",
                help="Fixed λ, one value or one per task [default: tuned on the validation split]",
            ),
            click.option(
                "--lambda-grid",
                help=_help(
                    "λ candidates for tuning and ta-grid",
                    MergeSettings,
                    "lambda_grid",
                    "reference tuning grid",
                ),
            ),
            click.option(
                "--init",
                type=click.Choice(["prior", "ta-grid"]),
                help=_help("Expert Merging initialization", MergeSettings, "init"),
            ),
            click.option(
                "--prior",
                type=float,
                help=_help("Coefficient prior ᾱ", AlignConfig, "prior", REFERENCE),
            ),
            click.option(
                "--gamma",
                type=float,
                help=_help("Regularizer weight γ", AlignConfig, "gamma", REFERENCE),
            ),
            click.option(
                "--temp", type=float, help=_help("Logit temperature T", AlignConfig, "temperature")
            ),
            click.option(
                "--beta", help="Task weights as task=value,... [default: 1 for every task]"
            ),
            click.option(
                "--samples",
                type=int,
                help=_help("Calibration samples N per task", RunConfig, "calib_samples", REFERENCE),
            ),
            click.option(
                "--merge-steps",
                type=int,
                help=_help("Coefficient optimizer steps", AlignConfig, "steps"),
            ),
            click.option(
                "--merge-lr",
                type=float,
                help=_help("Coefficient Adam step size", AlignConfig, "lr"),
            ),
            click.option(
                "--hidden-layers",
                help=(
                    "Blocks supervised by the hidden loss"
                    f" [default: the middle block; {REFERENCE}]"
                ),
            ),
            click.option("--no-hidden-loss", is_flag=True, help="Drop the hidden-state term"),
            click.option("--no-logit-loss", is_flag=True, help="Drop the logit term"),
            click.option("--no-regularizer", is_flag=True, help="Drop γ·R(α)"),
            click.option(
                "--budget-factor",
                type=float,
                help=_help(
                    "Chunk budget B per mergeable unit",
                    PlusPlusConfig,
                    "budget_factor",
                    "midpoint of the reference band 0.9 to 1.2",
                ),
            ),
            click.option(
                "--kappa",
                type=float,
                help=_help("Allocation steepness κ", PlusPlusConfig, "kappa", REFERENCE),
            ),
            click.option(
                "--gate",
                type=click.Choice(["validation", "alignment", "none"]),
                help=_help("Check a refinement must pass", PlusPlusConfig, "gate"),
            ),
            click.option(
                "--chunk-all",
                type=int,
                help="Give every unit N chunks instead of allocating by importance",
            ),
            click.option(
                "--no-chunking", is_flag=True, help="Freeze every unit in the refinement stage"
            ),
            click.option(
                "--keep-fraction",
                type=float,
                help=_help("TIES trim keep-fraction ρ", TiesConfig, "keep_fraction"),
            ),
            click.option(
                "--drop-prob",
                type=float,
                help=_help("DARE drop probability p", DareConfig, "drop_prob"),
            ),
        ],
    )


def build_overrides(
    params: dict[str, Any], task_ids: list[str], train_target: str | None = None
) -> dict[str, Any]:
    """Flag values that were given, as a nested override dict for the run config."""
    out: dict[str, Any] = {}
    _set(out, "output_dir", params.get("output_dir") and str(params["output_dir"]))
    _set(out, "seed", params.get("seed"))
    if train_target is not None:
        _set(out, f"{train_target}.steps", params.get("train_steps"))
        _set(out, f"{train_target}.lr", params.get("train_lr"))
        _set(out, f"{train_target}.batch_size", params.get("batch_size"))
        _set(out, f"{train_target}.accuracy_threshold", params.get("threshold"))

    _set(out, "merge.method", params.get("method"))
    _set(out, "merge.lambdas", parse_floats(params.get("lambdas"), "--lambda"))
    _set(out, "merge.lambda_grid", parse_floats(params.get("lambda_grid"), "--lambda-grid"))
    _set(out, "merge.init", params.get("init"))
    _set(out, "merge.align.prior", params.get("prior"))
    _set(out, "merge.align.gamma", params.get("gamma"))
    _set(out, "merge.align.temperature", params.get("temp"))
    _set(out, "merge.align.task_weights", parse_betas(params.get("beta"), task_ids))
    _set(out, "calib_samples", params.get("samples"))
    _set(out, "merge.align.steps", params.get("merge_steps"))
    _set(out, "merge.align.lr", params.get("merge_lr"))
    layers = parse_ints(params.get("hidden_layers"), "--hidden-layers")
    _set(out, "merge.align.hidden_layers", layers)
    for flag, field in (
        ("no_hidden_loss", "use_hidden_loss"),
        ("no_logit_loss", "use_logit_loss"),
        ("no_regularizer", "use_regularizer"),
    ):
        if params.get(flag):
            _set(out, f"merge.align.{field}", False)
    _set(out, "merge.pp.budget_factor", params.get("budget_factor"))
    _set(out, "merge.pp.kappa", params.get("kappa"))
    _set(out, "merge.pp.chunk_all", params.get("chunk_all"))
    _set(out, "merge.pp.gate", params.get("gate"))
    if params.get("no_chunking"):
        _set(out, "merge.pp.enabled", False)
    _set(out, "merge.ties.keep_fraction", params.get("keep_fraction"))
    _set(out, "merge.dare.drop_prob", params.get("drop_prob"))
    return out


def resolve_config(
    params: dict[str, Any],
    train_target: str | None = None,
    extra: dict[str, Any] | None = None,
) -> RunConfig:
    """Defaults < config file < flags; validated before any work starts."""
    file_config = load_run_config(params.get("config_path"))
    overrides = build_overrides(params, file_config.task_ids, train_target)
    if "output_dir" not in overrides and params.get("config_path") is None:
        overrides["output_dir"] = str(get_settings().output_dir / "default")
    return file_config.with_overrides({**overrides, **(extra or {})})


def make_pipeline(config: RunConfig, replace_merges: bool = True) -> Pipeline:
    return Pipeline(config, get_settings(), replace_merges=replace_merges)


def handle_errors(stage: str) -> Callable:
    """Print one ``error=<CLASS> stage=... message=...`` line and exit 1 on failure."""

    def decorator(func: Callable) -> Callable:
        @functools.wraps(func)
        def wrapper(*args: Any, **kwargs: Any) -> Any:
            try:
                return func(*args, **kwargs)
            except ExpertMergeError as exc:
                click.echo(exc.one_line(exc.stage or stage), err=True)
                logger.debug("Command failed", stage=exc.stage or stage, error=exc.error_class)
                sys.exit(1)

        return wrapper

    return decorator
