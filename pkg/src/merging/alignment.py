"""Hidden-state + logit alignment objective against frozen experts."""

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Literal

import torch
from pydantic import BaseModel, Field, field_validator

from src.autodiff import softmax_kl, sq_l2_distance
from src.exceptions import ConfigError, SchemaMismatchError
from src.model import ModelParams, forward
from src.tasks.calibration import CalibrationSet


class AlignConfig(BaseModel):
    """Objective and optimizer settings shared by layer-wise and chunk-wise fitting."""

    temperature: float = Field(default=1.0, gt=0, description="Logit temperature T")
    hidden_layers: list[int] | None = Field(
        default=None, description="Blocks S for hidden alignment; None means the middle block"
    )
    task_weights: list[float] | None = Field(
        default=None, description="Task weights β_k; None means 1 for every task"
    )
    gamma: float = Field(default=0.8, ge=0, description="Regularizer weight γ")
    prior: float = Field(default=0.3, description="Coefficient prior ᾱ for prior initialization")
    lr: float = Field(default=1e-2, gt=0, description="Adam step size")
    steps: int = Field(default=200, ge=0, description="Optimizer steps")
    betas: tuple[float, float] = Field(default=(0.9, 0.999), description="Adam moment decay")
    seed: int = Field(default=0, description="Seed for the optimization run")
    use_hidden_loss: bool = Field(default=True, description="Include the hidden-state term")
    use_logit_loss: bool = Field(default=True, description="Include the logit term")
    use_regularizer: bool = Field(default=True, description="Include γ·R(α)")
    snapshot_every: int = Field(default=50, ge=1, description="Coefficient snapshot interval")
    lr_schedule: Literal["cosine", "constant"] = Field(
        default="cosine", description="Step-size schedule; cosine decays to zero over the run"
    )
    restore_best: bool = Field(
        default=False, description="Return the best iterate seen instead of the last"
    )

    @field_validator("task_weights")
    @classmethod
    def _nonnegative(cls, value: list[float] | None) -> list[float] | None:
        if value is not None and any(w < 0 for w in value):
            raise ValueError("Task weights must be nonnegative")
        return value

    def layers_for(self, n_blocks: int) -> list[int]:
        layers = self.hidden_layers if self.hidden_layers is not None else [n_blocks // 2]
        for layer in layers:
            if not 0 <= layer < n_blocks:
                raise ConfigError(f"Hidden layer {layer} outside [0, {n_blocks})")
        return sorted(set(layers))

    def weights_for(self, num_tasks: int) -> list[float]:
        if self.task_weights is None:
            return [1.0] * num_tasks
        if len(self.task_weights) != num_tasks:
            raise ConfigError(
                f"Got {len(self.task_weights)} task weights for {num_tasks} tasks"
            )
        return list(self.task_weights)


@dataclass
class _TargetGroup:
    tokens: torch.Tensor
    hidden: dict[int, torch.Tensor]
    logits: torch.Tensor
    share: float


@dataclass
class ExpertTargets:
    """Expert-side hidden states and logits, computed once per calibration sample."""

    task_ids: list[str]
    layers: list[int]
    groups: list[list[_TargetGroup]]

    @classmethod
    def build(
        cls, experts: list[ModelParams], calib: CalibrationSet, layers: list[int]
    ) -> "ExpertTargets":
        if len(experts) != len(calib.task_ids):
            raise SchemaMismatchError(
                f"{len(experts)} experts for {len(calib.task_ids)} calibration tasks"
            )
        groups = []
        with torch.no_grad():
            for expert, task_id in zip(experts, calib.task_ids):
                samples = calib.for_task(task_id)
                by_length: dict[int, list[tuple[int, ...]]] = defaultdict(list)
                for sample in samples:
                    by_length[len(sample)].append(sample)
                task_groups = []
                for length in sorted(by_length):
                    tokens = torch.tensor(by_length[length], dtype=torch.long)
                    trace = forward(expert, tokens)
                    task_groups.append(
                        _TargetGroup(
                            tokens=tokens,
                            hidden={layer: trace.hidden_states[layer] for layer in layers},
                            logits=trace.logits,
                            share=len(by_length[length]) / len(samples),
                        )
                    )
                groups.append(task_groups)
        return cls(task_ids=list(calib.task_ids), layers=list(layers), groups=groups)


@dataclass
class AlignmentTerms:
    """Per-task loss terms and their combination at one coefficient setting."""

    hidden: list[torch.Tensor]
    logit: list[torch.Tensor]
    regularizer: torch.Tensor
    align: torch.Tensor
    total: torch.Tensor

    def finite_or_offender(self) -> str | None:
        named = [("regularizer", self.regularizer), ("total", self.total)]
        named += [(f"hidden[{k}]", t) for k, t in enumerate(self.hidden)]
        named += [(f"logit[{k}]", t) for k, t in enumerate(self.logit)]
        for name, value in named:
            if not bool(torch.isfinite(value)):
                return name
        return None


def alignment_terms(
    merged: ModelParams,
    targets: ExpertTargets,
    cfg: AlignConfig,
    regularizer: torch.Tensor,
) -> AlignmentTerms:
    """
    Σ_k β_k (L_hid^(k) + L_logit^(k)) + γ·R.

    L_hid sums over the supervised blocks the squared distance averaged over
    samples, positions and hidden dimension; L_logit is the T²-scaled KL
    averaged over samples and positions. Tasks are averaged per sample first.
    """
    weights = cfg.weights_for(len(targets.task_ids))
    d_model = merged.config.d_model
    zero = torch.zeros((), dtype=torch.float64)
    hidden_terms, logit_terms = [], []
    align = zero
    for beta, task_groups in zip(weights, targets.groups):
        hidden, logit = zero, zero
        for group in task_groups:
            trace = forward(merged, group.tokens)
            if cfg.use_hidden_loss:
                for layer in targets.layers:
                    distance = sq_l2_distance(trace.hidden_states[layer], group.hidden[layer])
                    hidden = hidden + group.share * distance.tensor / d_model
            if cfg.use_logit_loss:
                kl = softmax_kl(group.logits, trace.logits, cfg.temperature)
                logit = logit + group.share * kl.tensor
        hidden_terms.append(hidden)
        logit_terms.append(logit)
        align = align + beta * (hidden + logit)
    reg = regularizer if cfg.use_regularizer else zero
    total = align + cfg.gamma * reg
    return AlignmentTerms(hidden_terms, logit_terms, reg, align, total)


@dataclass
class TrainLog:
    """Per-step objective values, coefficient snapshots and the kept iterate."""

    task_ids: list[str]
    total: list[float] = field(default_factory=list)
    align: list[float] = field(default_factory=list)
    regularizer: list[float] = field(default_factory=list)
    hidden: list[list[float]] = field(default_factory=list)
    logit: list[list[float]] = field(default_factory=list)
    snapshot_every: int = 50
    snapshots: list[tuple[int, torch.Tensor]] = field(default_factory=list)
    initial_total: float | None = None
    final_total: float | None = None
    final_align: float | None = None
    best_total: float | None = None
    best_step: int = 0
    kept_step: int = 0

    def record(self, terms: AlignmentTerms) -> None:
        self.total.append(float(terms.total))
        self.align.append(float(terms.align))
        self.regularizer.append(float(terms.regularizer))
        self.hidden.append([float(t) for t in terms.hidden])
        self.logit.append([float(t) for t in terms.logit])

    @property
    def steps(self) -> int:
        return len(self.total)

    @property
    def final_gap(self) -> float:
        """How far the returned iterate sits above the lowest objective seen."""
        if self.final_total is None or self.best_total is None:
            return 0.0
        return self.final_total - self.best_total

    def rows(self) -> list[dict[str, float | int]]:
        """One dict per optimizer step, suitable for a CSV training curve."""
        rows = []
        for step in range(self.steps):
            row: dict[str, float | int] = {
                "step": step,
                "total": self.total[step],
                "align": self.align[step],
                "regularizer": self.regularizer[step],
            }
            for k, task_id in enumerate(self.task_ids):
                row[f"hidden.{task_id}"] = self.hidden[step][k]
                row[f"logit.{task_id}"] = self.logit[step][k]
            rows.append(row)
        return rows
