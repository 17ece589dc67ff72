"""Importance-guided chunk-wise refinement of stage-1 layer coefficients."""

from dataclasses import dataclass
from typing import Literal

import structlog
import torch
from pydantic import BaseModel, Field

from src.config import Settings
from src.exceptions import ConfigError, SchemaMismatchError
from src.merging.alignment import AlignConfig, ExpertTargets, TrainLog, alignment_terms
from src.merging.chunking import ChunkPlan, allocate_chunks, chunk_all
from src.merging.coefficients import ChunkCoefficients, LayerCoefficients
from src.merging.importance import ImportanceReport, compute_importance
from src.merging.task_vectors import (
    TaskVector,
    UnitStats,
    combine_unit,
    require_aligned,
    unit_stats,
)
from src.merging.trainer import CoefficientTrainer
from src.model import ModelParams, UnitId
from src.tasks.calibration import CalibrationSet

logger = structlog.get_logger(__name__)


class PlusPlusConfig(BaseModel):
    """Chunk budget and allocation settings for the refinement stage."""

    budget_factor: float = Field(
        default=1.1, gt=0, description="B as a multiple of the mergeable-unit count"
    )
    kappa: float = Field(default=1.2, ge=0, description="Allocation steepness κ")
    chunk_all: int | None = Field(
        default=None, ge=1, description="Give every unit this many chunks instead of allocating"
    )
    enabled: bool = Field(default=True, description="False freezes every unit (no chunking)")
    gate: Literal["validation", "alignment", "none"] = Field(
        default="validation",
        description="Check a refinement must pass to replace the stage-1 merge",
    )

    def budget(self, num_units: int) -> float:
        return self.budget_factor * num_units


def frozen_plan(units: list[UnitId], param_counts: list[int]) -> ChunkPlan:
    """A plan with m_ℓ = 0 everywhere: every unit keeps its stage-1 scalar."""
    return ChunkPlan(
        budget=0.0,
        kappa=0.0,
        units=list(units),
        counts=[0] * len(param_counts),
        param_counts=list(param_counts),
    )


def plan_chunks(
    base: ModelParams,
    stage1: LayerCoefficients,
    stats: list[UnitStats],
    pp_cfg: PlusPlusConfig,
) -> tuple[ChunkPlan, ImportanceReport]:
    """Score units from the stage-1 result and turn the scores into a chunk plan."""
    report = compute_importance(stage1, stats)
    param_counts = [base.config.param_count(unit) for unit in base.units]
    if not pp_cfg.enabled:
        plan = frozen_plan(base.units, param_counts)
    elif pp_cfg.chunk_all is not None:
        plan = chunk_all(base.units, param_counts, pp_cfg.chunk_all)
    else:
        plan = allocate_chunks(report, pp_cfg.budget(len(base.units)), pp_cfg.kappa)
    return plan, report


def init_chunk_coefficients(plan: ChunkPlan, stage1: LayerCoefficients) -> ChunkCoefficients:
    """Every chunk of unit ℓ starts at α_k^ℓ; frozen units keep α_k^ℓ as a fixed scalar."""
    if plan.units != stage1.units:
        raise SchemaMismatchError("Chunk plan and stage-1 coefficients disagree on units")
    chunked, frozen = {}, {}
    for j, unit in enumerate(plan.units):
        column = stage1.alpha[:, j].detach().clone()
        m = plan.count(unit)
        if m == 0:
            frozen[unit] = column
        else:
            chunked[unit] = column.unsqueeze(1).repeat(1, m)
    return ChunkCoefficients(
        expert_ids=list(stage1.expert_ids),
        units=list(plan.units),
        chunked=chunked,
        frozen=frozen,
        prior=stage1.prior.detach().clone(),
    )


def _check_plan(plan: ChunkPlan, coeffs: ChunkCoefficients) -> None:
    if plan.units != coeffs.units:
        raise SchemaMismatchError("Chunk plan and coefficients disagree on units")
    counts = coeffs.chunk_counts()
    for unit, m in zip(plan.units, plan.counts):
        if counts[unit] != m:
            raise SchemaMismatchError(
                f"Unit {unit} has {counts[unit]} chunk coefficients, plan says {m}"
            )


def _expand(row: torch.Tensor, sizes: list[int], shape: torch.Size) -> torch.Tensor:
    """Per-chunk coefficients broadcast to the unit's flat layout and reshaped."""
    repeats = torch.tensor(sizes, dtype=torch.long)
    return torch.repeat_interleave(row, repeats).reshape(shape)


def apply_chunk_coefficients(
    base: ModelParams,
    task_vectors: list[TaskVector],
    plan: ChunkPlan,
    coeffs: ChunkCoefficients,
) -> ModelParams:
    """θ_base^ℓ + Σ_k Σ_s α_{k,s}^ℓ τ_{k,s}^ℓ, with frozen units on the scalar path."""
    vectors = require_aligned(base, task_vectors)
    if coeffs.num_experts != len(vectors):
        raise SchemaMismatchError(
            f"{coeffs.num_experts} coefficient rows for {len(vectors)} task vectors"
        )
    if plan.units != base.units:
        raise SchemaMismatchError("Chunk plan does not match the base schema")
    _check_plan(plan, coeffs)

    merged = {}
    for unit in base.units:
        if unit in coeffs.frozen:
            scalars = coeffs.frozen[unit]
            terms = [(scalars[k], tv[unit]) for k, tv in enumerate(vectors)]
        else:
            table, sizes, shape = coeffs.chunked[unit], plan.sizes(unit), base[unit].shape
            terms = [(_expand(table[k], sizes, shape), tv[unit]) for k, tv in enumerate(vectors)]
        merged[unit] = combine_unit(base[unit], terms)
    return ModelParams(base.config, merged)


def chunk_regularizer(coeffs: ChunkCoefficients, budget: float) -> torch.Tensor:
    """(1/(B·K)) Σ_{k,ℓ,s} |α_{k,s}^ℓ − ᾱ_k| over trainable chunks."""
    total = torch.zeros((), dtype=torch.float64)
    if not coeffs.chunked or budget <= 0:
        return total
    prior = coeffs.prior.unsqueeze(1)
    for table in coeffs.chunked.values():
        total = total + (table - prior).abs().sum()
    return total / (budget * coeffs.num_experts)


def _snapshot(coeffs: ChunkCoefficients) -> torch.Tensor:
    if not coeffs.chunked:
        return torch.zeros((coeffs.num_experts, 0), dtype=torch.float64)
    return torch.cat([t.detach() for t in coeffs.chunked.values()], dim=1).clone()


def fit_pp(
    base: ModelParams,
    task_vectors: list[TaskVector],
    experts: list[ModelParams],
    calib: CalibrationSet,
    cfg: AlignConfig,
    stage1: LayerCoefficients,
    pp_cfg: PlusPlusConfig | None = None,
    stats: list[UnitStats] | None = None,
    plan: ChunkPlan | None = None,
    settings: Settings | None = None,
    targets: ExpertTargets | None = None,
) -> tuple[ChunkCoefficients, TrainLog]:
    """
    Refine a completed stage-1 result chunk by chunk.

    Importance is scored from ``stage1``, chunks are allocated under the
    budget, every chunk starts at its unit's stage-1 value and only the
    chunk tables are optimized. Units with zero chunks never change.
    """
    pp_cfg = pp_cfg or PlusPlusConfig()
    if len(experts) != len(task_vectors):
        raise SchemaMismatchError(f"{len(experts)} experts for {len(task_vectors)} task vectors")
    if plan is None:
        stats = stats or [unit_stats(tv) for tv in task_vectors]
        plan, _ = plan_chunks(base, stage1, stats, pp_cfg)
    targets = targets or ExpertTargets.build(experts, calib, cfg.layers_for(base.config.n_blocks))

    coeffs = init_chunk_coefficients(plan, stage1)
    for unit in coeffs.chunked:
        coeffs.chunked[unit].requires_grad_(True)
    leaves = list(coeffs.chunked.values())

    def evaluate():
        merged = apply_chunk_coefficients(base, task_vectors, plan, coeffs)
        return alignment_terms(merged, targets, cfg, chunk_regularizer(coeffs, plan.budget))

    logger.info(
        "Chunk refinement started",
        trainable_per_expert=coeffs.trainable_count(),
        frozen_units=len(coeffs.frozen),
        budget=plan.budget,
    )
    log = CoefficientTrainer(cfg, settings).optimize(
        leaves,
        evaluate,
        task_ids=targets.task_ids,
        snapshot=lambda: _snapshot(coeffs),
        label="expert-merging-pp",
    )
    return coeffs.detach(), log


@dataclass
class RefinementVerdict:
    """Whether refined chunk coefficients replace the stage-1 merge, and why."""

    kept: bool
    reason: str


def review_refinement(
    gate: str,
    refined_align: float,
    stage1_align: float,
    refined_accuracy: float | None = None,
    stage1_accuracy: float | None = None,
) -> RefinementVerdict:
    """
    Accept a refinement only if it keeps what stage 1 achieved.

    ``alignment`` requires the refined alignment loss not to exceed the
    stage-1 one; ``validation`` additionally requires the validation macro
    accuracy not to drop. A rejected refinement falls back to chunks at
    their stage-1 values, which merge to the stage-1 model exactly.
    """
    if gate == "none":
        return RefinementVerdict(kept=True, reason="unchecked")
    if gate not in ("alignment", "validation"):
        raise ConfigError(f"Unknown refinement gate {gate!r}")
    if refined_align > stage1_align:
        return RefinementVerdict(kept=False, reason="alignment")
    if gate == "validation":
        if refined_accuracy is None or stage1_accuracy is None:
            raise ConfigError("The validation gate needs both validation accuracies")
        if refined_accuracy < stage1_accuracy:
            return RefinementVerdict(kept=False, reason="validation")
    return RefinementVerdict(kept=True, reason="passed")
