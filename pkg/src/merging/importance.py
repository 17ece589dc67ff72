"""Per-unit importance from coefficient magnitude, task-vector weight and size."""

from collections import defaultdict
from dataclasses import dataclass

import structlog
import torch

from src.exceptions import DegenerateInputError, SchemaMismatchError
from src.merging.coefficients import LayerCoefficients
from src.merging.task_vectors import UnitStats
from src.model import UnitId

logger = structlog.get_logger(__name__)

STAGES = ("early", "middle", "late", "global")


def stage_of(unit: UnitId, n_blocks: int) -> str:
    """Blocks split into thirds by index, remainder to late; non-block units are global."""
    if unit.block is None:
        return "global"
    third = n_blocks // 3
    if unit.block < third:
        return "early"
    if unit.block < 2 * third:
        return "middle"
    return "late"


@dataclass
class ImportanceReport:
    """
    Normalized importance I_ℓ per unit with its factor breakdown.

    ``alpha_abs`` and ``weights`` are the per-expert |α_k^ℓ| and s_k^ℓ,
    ``factors`` their product, and ``raw`` = Σ_k factors · n_ℓ before ℓ1
    normalization.
    """

    expert_ids: list[str]
    units: list[UnitId]
    n_blocks: int
    alpha_abs: torch.Tensor
    weights: torch.Tensor
    param_counts: list[int]
    raw: torch.Tensor
    importance: torch.Tensor

    @property
    def factors(self) -> torch.Tensor:
        return self.alpha_abs * self.weights

    def value(self, unit: UnitId) -> float:
        return float(self.importance[self.units.index(unit)])

    def _grouped(self, values: torch.Tensor, key) -> dict[str, float]:
        totals: dict[str, float] = defaultdict(float)
        for unit, value in zip(self.units, values.tolist()):
            totals[key(unit)] += value
        return dict(totals)

    def by_stage(self) -> dict[str, float]:
        return self._grouped(self.importance, lambda u: stage_of(u, self.n_blocks))

    def by_kind(self) -> dict[str, float]:
        return self._grouped(self.importance, lambda u: u.kind.value)

    def stage_kind_table(self) -> dict[tuple[str, str], float]:
        table: dict[tuple[str, str], float] = defaultdict(float)
        for unit, value in zip(self.units, self.importance.tolist()):
            table[(stage_of(unit, self.n_blocks), unit.kind.value)] += value
        return dict(table)

    def param_share_by_kind(self) -> dict[str, float]:
        counts = torch.tensor(self.param_counts, dtype=torch.float64)
        return self._grouped(counts / counts.sum(), lambda u: u.kind.value)

    def coefficient_share(self, by: str = "kind") -> dict[str, float]:
        """Share of Σ_k |α_k^ℓ| grouped by submodule kind or by stage."""
        magnitude = self.alpha_abs.sum(dim=0)
        total = magnitude.sum()
        shares = magnitude / total if float(total) > 0 else torch.zeros_like(magnitude)
        if by == "stage":
            return self._grouped(shares, lambda u: stage_of(u, self.n_blocks))
        return self._grouped(shares, lambda u: u.kind.value)


def compute_importance(coeffs: LayerCoefficients, stats: list[UnitStats]) -> ImportanceReport:
    """raw_ℓ = Σ_k |α_k^ℓ|·s_k^ℓ·n_ℓ, then ℓ1-normalized to I_ℓ."""
    if len(stats) != coeffs.num_experts:
        raise SchemaMismatchError(
            f"Got {len(stats)} unit-stat sets for {coeffs.num_experts} experts"
        )
    for stat in stats:
        if stat.units != coeffs.units:
            raise SchemaMismatchError("Unit stats and coefficients disagree on units")

    alpha_abs = coeffs.alpha.detach().abs()
    weights = torch.stack([stat.s for stat in stats])
    counts = stats[0].n
    raw = (alpha_abs * weights).sum(dim=0) * counts.to(torch.float64)
    total = raw.sum()
    if float(total) == 0.0:
        raise DegenerateInputError("All-zero importance: every unit scored 0")

    n_blocks = 1 + max((u.block for u in coeffs.units if u.block is not None), default=-1)
    report = ImportanceReport(
        expert_ids=list(coeffs.expert_ids),
        units=list(coeffs.units),
        n_blocks=n_blocks,
        alpha_abs=alpha_abs,
        weights=weights,
        param_counts=[int(n) for n in counts.tolist()],
        raw=raw,
        importance=raw / total,
    )
    logger.info("Importance computed", units=len(report.units), by_stage=report.by_stage())
    return report
