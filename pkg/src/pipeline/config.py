"""Declarative run configuration: defaults < YAML file < command-line flags."""

from pathlib import Path
from typing import Any, Literal

import yaml
from pydantic import BaseModel, Field, ValidationError, model_validator

from src.exceptions import ConfigError
from src.merging import AlignConfig, DareConfig, PlusPlusConfig, TiesConfig
from src.model import ModelConfig
from src.tasks import DEFAULT_TASKS, TaskSpec, TrainHyper

MergeMethod = Literal["average", "ta", "ties", "dare-ta", "dare-ties", "expert", "expert-pp"]
MERGE_METHODS: tuple[str, ...] = (
    "average",
    "ta",
    "ties",
    "dare-ta",
    "dare-ties",
    "expert",
    "expert-pp",
)
TUNED_METHODS = frozenset({"ta", "ties", "dare-ta", "dare-ties"})

Ablation = Literal[
    "no-hidden-loss", "no-logit-loss", "no-regularizer", "no-chunking", "chunk-all-2x"
]

# ablation -> (method it modifies, overrides applied to the merge settings)
ABLATIONS: dict[str, tuple[str, dict[str, Any]]] = {
    "no-hidden-loss": ("expert", {"align": {"use_hidden_loss": False}}),
    "no-logit-loss": ("expert", {"align": {"use_logit_loss": False}}),
    "no-regularizer": ("expert", {"align": {"use_regularizer": False}}),
    "no-chunking": ("expert-pp", {"pp": {"enabled": False}}),
    "chunk-all-2x": ("expert-pp", {"pp": {"chunk_all": 2}}),
}


class MergeSettings(BaseModel):
    """Hyperparameters of every merge method."""

    method: MergeMethod = Field(default="expert", description="Merge method")
    lambdas: list[float] | None = Field(
        default=None,
        description="Fixed λ per expert (one value is broadcast); None tunes on the grid",
    )
    lambda_grid: list[float] = Field(
        default=[0.1, 0.3, 0.5, 1.0], min_length=1, description="λ candidates"
    )
    validation_samples: int = Field(default=50, ge=1, description="Per-task λ-tuning samples")
    init: Literal["prior", "ta-grid"] = Field(default="prior", description="Expert Merging start")
    align: AlignConfig = Field(default_factory=AlignConfig)
    pp: PlusPlusConfig = Field(default_factory=PlusPlusConfig)
    ties: TiesConfig = Field(default_factory=TiesConfig)
    dare: DareConfig = Field(default_factory=DareConfig)


def _default_base_hyper() -> TrainHyper:
    return TrainHyper(steps=800, accuracy_threshold=0.0)


def _default_mixture_hyper() -> TrainHyper:
    return TrainHyper(steps=900, accuracy_threshold=0.5)


class RunConfig(BaseModel):
    """Everything one pipeline run depends on; serialized into every output directory."""

    output_dir: Path = Field(default=Path("runs/default"), description="Run directory")
    seed: int = Field(default=0, description="Root seed; every stream derives from it")
    model: ModelConfig = Field(default_factory=ModelConfig)
    tasks: list[TaskSpec] = Field(default_factory=lambda: list(DEFAULT_TASKS), min_length=1)
    base_hyper: TrainHyper = Field(default_factory=_default_base_hyper)
    expert_hyper: TrainHyper = Field(default_factory=TrainHyper)
    mixture_hyper: TrainHyper = Field(default_factory=_default_mixture_hyper)
    calib_samples: int = Field(default=5, ge=1, description="Calibration samples N per task")
    eval_samples: int = Field(default=200, ge=1, description="Test samples per task")
    merge: MergeSettings = Field(default_factory=MergeSettings)
    methods: list[MergeMethod] = Field(
        default_factory=lambda: list(MERGE_METHODS), description="Methods the run stage merges"
    )
    include_mixture: bool = Field(default=True, description="Train the mixture comparator")
    ablations: list[Ablation] = Field(default_factory=list, description="Ablation variants to run")

    @model_validator(mode="after")
    def _check(self) -> "RunConfig":
        ids = [t.task_id for t in self.tasks]
        if len(set(ids)) != len(ids):
            raise ValueError(f"Duplicate task ids in {ids}")
        for spec in self.tasks:
            if spec.sequence_len > self.model.max_seq_len:
                raise ValueError(f"Task {spec.task_id} does not fit max_seq_len")
        layers = self.merge.align.hidden_layers or []
        if any(not 0 <= layer < self.model.n_blocks for layer in layers):
            raise ValueError(f"Hidden layers {layers} outside [0, {self.model.n_blocks})")
        weights = self.merge.align.task_weights
        if weights is not None and len(weights) != len(self.tasks):
            raise ValueError(f"{len(weights)} task weights for {len(self.tasks)} tasks")
        lambdas = self.merge.lambdas
        if lambdas is not None and len(lambdas) not in (1, len(self.tasks)):
            raise ValueError(f"Give one λ or one per task, got {len(lambdas)}")
        return self

    @property
    def task_ids(self) -> list[str]:
        return [t.task_id for t in self.tasks]

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.model_dump(mode="json"), sort_keys=True, allow_unicode=True)

    def with_overrides(self, overrides: dict[str, Any]) -> "RunConfig":
        return build_run_config(deep_merge(self.model_dump(mode="json"), overrides))


def deep_merge(base: dict[str, Any], overrides: dict[str, Any]) -> dict[str, Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def build_run_config(data: dict[str, Any]) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(p) for p in first["loc"]) or "config"
        raise ConfigError(f"Invalid run config at {where}: {first['msg']}") from exc


def load_run_config(path: str | Path | None, overrides: dict[str, Any] | None = None) -> RunConfig:
    """Validate the whole configuration before any work starts."""
    data: dict[str, Any] = {}
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"Cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"Config {path} is not valid YAML: {exc}") from exc
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigError(f"Config {path} must be a mapping")
        data = loaded or {}
    return build_run_config(deep_merge(data, overrides or {}))
