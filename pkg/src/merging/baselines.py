"""Training-free baselines: weight averaging, Task Arithmetic, DARE and TIES."""

import hashlib
import math

import structlog
import torch
from pydantic import BaseModel, Field

from src.exceptions import ConfigError
from src.merging.task_vectors import TaskVector, combine_unit, require_aligned
from src.model import ModelParams, UnitId

logger = structlog.get_logger(__name__)


class TAConfig(BaseModel):
    """Per-expert Task Arithmetic scales λ_k."""

    lambdas: list[float] = Field(..., description="One finite scale per expert")


class DareConfig(BaseModel):
    """Drop-and-rescale settings."""

    drop_prob: float = Field(default=0.5, ge=0.0, lt=1.0, description="Drop probability p")
    seed: int = Field(default=0, description="Base seed; each unit derives its own stream")


class TiesConfig(BaseModel):
    """Trim / elect-sign / disjoint-merge settings."""

    keep_fraction: float = Field(default=0.2, gt=0.0, le=1.0, description="Trim keep-fraction ρ")
    scale: float = Field(default=1.0, description="Final scale λ on the merged vector")


def merge_task_arithmetic(
    base: ModelParams, task_vectors: list[TaskVector], cfg: TAConfig
) -> ModelParams:
    """θ_base + Σ_k λ_k τ_k."""
    vectors = require_aligned(base, task_vectors)
    if len(cfg.lambdas) != len(vectors):
        raise ConfigError(
            f"Expected {len(vectors)} lambdas, got {len(cfg.lambdas)}"
        )
    if not all(math.isfinite(v) for v in cfg.lambdas):
        raise ConfigError("Task Arithmetic lambdas must be finite")
    return base.map(
        lambda unit, t: combine_unit(t, [(lam, tv[unit]) for lam, tv in zip(cfg.lambdas, vectors)])
    )


def merge_weight_average(base: ModelParams, task_vectors: list[TaskVector]) -> ModelParams:
    """θ_base + (1/K)·Σ_k τ_k, i.e. Task Arithmetic with λ_k = 1/K."""
    vectors = require_aligned(base, task_vectors)
    uniform = TAConfig(lambdas=[1.0 / len(vectors)] * len(vectors))
    return merge_task_arithmetic(base, vectors, uniform)


def unit_seed(seed: int, unit: UnitId, expert_id: str) -> int:
    """Seed ⊕ stable unit hash, so streams do not depend on iteration order."""
    digest = hashlib.sha256(f"{expert_id}/{unit.name}".encode("utf-8")).digest()
    return (seed ^ int.from_bytes(digest[:8], "little")) & ((1 << 63) - 1)


def dare_preprocess(tv: TaskVector, cfg: DareConfig) -> TaskVector:
    """Zero each scalar with probability p and rescale survivors by 1/(1−p)."""
    rescale = 1.0 / (1.0 - cfg.drop_prob)
    deltas = {}
    for unit, delta in tv.deltas.items():
        generator = torch.Generator().manual_seed(unit_seed(cfg.seed, unit, tv.expert_id))
        keep = torch.rand(delta.shape, generator=generator, dtype=delta.dtype) >= cfg.drop_prob
        deltas[unit] = torch.where(keep, delta * rescale, torch.zeros_like(delta))
    logger.debug("DARE applied", expert_id=tv.expert_id, drop_prob=cfg.drop_prob, seed=cfg.seed)
    return tv.with_deltas(deltas)


def trim_top_fraction(flat: torch.Tensor, keep_fraction: float) -> torch.Tensor:
    """Keep entries whose magnitude reaches the ⌈ρ·n⌉-th largest; ties at the cut are kept."""
    n = flat.numel()
    keep = max(1, math.ceil(keep_fraction * n))
    if keep >= n:
        return flat.clone()
    threshold = torch.sort(flat.abs(), descending=True).values[keep - 1]
    return torch.where(flat.abs() >= threshold, flat, torch.zeros_like(flat))


def _ordered_sum(stacked: torch.Tensor) -> torch.Tensor:
    total = stacked[0]
    for row in stacked[1:]:
        total = total + row
    return total


def ties_unit(deltas: list[torch.Tensor], keep_fraction: float) -> torch.Tensor:
    """TIES on one unit; returns the merged delta before the final scale."""
    shape = deltas[0].shape
    trimmed = torch.stack([trim_top_fraction(d.reshape(-1), keep_fraction) for d in deltas])
    # a zero signed sum elects sign 0, which forces the merged entry to 0
    elected = torch.sign(_ordered_sum(trimmed))
    agrees = (torch.sign(trimmed) == elected.unsqueeze(0)) & (elected.unsqueeze(0) != 0)
    kept = torch.where(agrees, trimmed, torch.zeros_like(trimmed))
    counts = agrees.sum(dim=0)
    merged = torch.where(
        counts > 0,
        _ordered_sum(kept) / counts.clamp(min=1).to(kept.dtype),
        torch.zeros_like(elected),
    )
    return merged.reshape(shape)


def merge_ties(base: ModelParams, task_vectors: list[TaskVector], cfg: TiesConfig) -> ModelParams:
    """Per unit: trim, elect sign, disjoint mean; then θ_base + λ·τ_merged."""
    if not task_vectors:
        raise ConfigError("TIES merging needs at least one task vector")
    vectors = require_aligned(base, task_vectors)
    merged = {
        unit: ties_unit([tv[unit] for tv in vectors], cfg.keep_fraction) for unit in base.units
    }
    logger.debug(
        "TIES merged", experts=len(vectors), keep_fraction=cfg.keep_fraction, scale=cfg.scale
    )
    return base.map(lambda unit, t: combine_unit(t, [(cfg.scale, merged[unit])]))
