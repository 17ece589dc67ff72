"""Importance-guided chunk budgets and contiguous chunk boundaries."""

import math
from dataclasses import dataclass

import structlog
import torch

from src.exceptions import ConfigError
from src.merging.importance import ImportanceReport
from src.model import UnitId

logger = structlog.get_logger(__name__)


def split_sizes(n: int, m: int) -> list[int]:
    """Near-equal contiguous split of n scalars into m chunks: ⌈n/m⌉ first, then ⌊n/m⌋."""
    if m < 1 or m > n:
        raise ConfigError(f"Cannot split {n} scalars into {m} chunks")
    small, extra = divmod(n, m)
    return [small + 1] * extra + [small] * (m - extra)


@dataclass
class ChunkPlan:
    """Chunk count m_ℓ per unit; units with m_ℓ = 0 keep a frozen scalar."""

    budget: float
    kappa: float
    units: list[UnitId]
    counts: list[int]
    param_counts: list[int]

    def __post_init__(self) -> None:
        if not (len(self.units) == len(self.counts) == len(self.param_counts)):
            raise ConfigError("Chunk plan fields have different lengths")
        for unit, m, n in zip(self.units, self.counts, self.param_counts):
            if m < 0 or m > n:
                raise ConfigError(f"Chunk count {m} invalid for unit {unit} with {n} scalars")
        if sum(self.counts) > self.budget + 1e-9:
            raise ConfigError(f"Chunk counts sum {sum(self.counts)} exceeds budget {self.budget}")

    def count(self, unit: UnitId) -> int:
        return self.counts[self.units.index(unit)]

    def is_frozen(self, unit: UnitId) -> bool:
        return self.count(unit) == 0

    @property
    def trainable_units(self) -> list[UnitId]:
        return [u for u, m in zip(self.units, self.counts) if m > 0]

    @property
    def frozen_units(self) -> list[UnitId]:
        return [u for u, m in zip(self.units, self.counts) if m == 0]

    @property
    def total_chunks(self) -> int:
        return sum(self.counts)

    def sizes(self, unit: UnitId) -> list[int]:
        index = self.units.index(unit)
        return split_sizes(self.param_counts[index], self.counts[index])

    def boundaries(self, unit: UnitId) -> list[tuple[int, int]]:
        """Flat-index [start, end) ranges of the unit's chunks."""
        bounds, start = [], 0
        for size in self.sizes(unit):
            bounds.append((start, start + size))
            start += size
        return bounds


def chunk_shares(importance: torch.Tensor, kappa: float) -> torch.Tensor:
    """Pre-floor allocation shares I^κ / Σ I^κ with 0^0 = 1."""
    if kappa == 0:
        weights = torch.ones_like(importance)
    else:
        weights = importance.pow(kappa)
    total = weights.sum()
    if float(total) == 0.0:
        raise ConfigError("Importance weights sum to zero")
    return weights / total


def allocate_chunks(report: ImportanceReport, budget: float, kappa: float) -> ChunkPlan:
    """m_ℓ = ⌊B·I_ℓ^κ / Σ_j I_j^κ⌋, clamped to the unit's scalar count."""
    if not budget > 0 or not math.isfinite(budget):
        raise ConfigError(f"Chunk budget must be positive, got {budget}")
    if kappa < 0 or not math.isfinite(kappa):
        raise ConfigError(f"Allocation steepness must be >= 0, got {kappa}")

    shares = chunk_shares(report.importance, kappa) * budget
    # shares that land within rounding noise of an integer count as that integer
    counts = [int(math.floor(float(x) + 1e-9)) for x in shares]
    while sum(counts) > budget:
        order = sorted(range(len(counts)), key=lambda i: (float(shares[i]) - counts[i], -i))
        for i in order:
            if counts[i] > 0:
                counts[i] -= 1
                break
    counts = [min(m, n) for m, n in zip(counts, report.param_counts)]

    plan = ChunkPlan(
        budget=float(budget),
        kappa=float(kappa),
        units=list(report.units),
        counts=counts,
        param_counts=list(report.param_counts),
    )
    logger.info(
        "Chunks allocated",
        budget=budget,
        kappa=kappa,
        total_chunks=plan.total_chunks,
        trainable_units=len(plan.trainable_units),
        frozen_units=len(plan.frozen_units),
    )
    return plan


def chunk_all(units: list[UnitId], param_counts: list[int], chunks_per_unit: int) -> ChunkPlan:
    """Uniform plan giving every unit the same number of chunks."""
    if chunks_per_unit < 1:
        raise ConfigError("chunk-all needs at least one chunk per unit")
    counts = [min(chunks_per_unit, n) for n in param_counts]
    return ChunkPlan(
        budget=float(chunks_per_unit * len(units)),
        kappa=0.0,
        units=list(units),
        counts=counts,
        param_counts=list(param_counts),
    )
