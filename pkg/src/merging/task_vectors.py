"""Task-vector algebra and per-unit statistics."""

from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass

import torch

from src.exceptions import DegenerateInputError, SchemaMismatchError
from src.model import ModelConfig, ModelParams, UnitId


@dataclass
class TaskVector:
    """Per-unit deltas τ_k = θ_k − θ_base of one expert."""

    expert_id: str
    config: ModelConfig
    deltas: dict[UnitId, torch.Tensor]
    base_fingerprint: str
    expert_fingerprint: str

    @property
    def units(self) -> list[UnitId]:
        return list(self.deltas)

    def __getitem__(self, unit: UnitId) -> torch.Tensor:
        return self.deltas[unit]

    def __iter__(self) -> Iterator[UnitId]:
        return iter(self.deltas)

    def with_deltas(self, deltas: Mapping[UnitId, torch.Tensor]) -> "TaskVector":
        return TaskVector(
            expert_id=self.expert_id,
            config=self.config,
            deltas={unit: deltas[unit] for unit in self.units},
            base_fingerprint=self.base_fingerprint,
            expert_fingerprint=self.expert_fingerprint,
        )

    def scaled(self, factor: float) -> "TaskVector":
        return self.with_deltas({u: t * factor for u, t in self.deltas.items()})

    def is_zero(self) -> bool:
        return all(not bool(t.any()) for t in self.deltas.values())


@dataclass
class UnitStats:
    """Per-unit task-vector weight: raw mean |τ|, its ℓ1-normalized share s, and n."""

    expert_id: str
    units: list[UnitId]
    s_raw: torch.Tensor
    s: torch.Tensor
    n: torch.Tensor

    def share(self, unit: UnitId) -> float:
        return float(self.s[self.units.index(unit)])


def compute_task_vector(
    base: ModelParams, expert: ModelParams, expert_id: str = "expert"
) -> TaskVector:
    """Elementwise expert − base for every unit."""
    if base.config != expert.config or base.units != expert.units:
        raise SchemaMismatchError(
            "Base and expert parameter schemas differ", expert_id=expert_id
        )
    deltas = {unit: (expert[unit] - base[unit]).detach() for unit in base.units}
    return TaskVector(
        expert_id=expert_id,
        config=base.config,
        deltas=deltas,
        base_fingerprint=base.fingerprint(),
        expert_fingerprint=expert.fingerprint(),
    )


def unit_stats(tv: TaskVector) -> UnitStats:
    """mean(|τ^ℓ|) per unit, normalized to sum one across units."""
    if not tv.deltas:
        raise DegenerateInputError("Task vector has no units", expert_id=tv.expert_id)
    s_raw = torch.stack([t.abs().mean() for t in tv.deltas.values()])
    total = s_raw.sum()
    if float(total) == 0.0:
        raise DegenerateInputError(
            "All-zero task vector: unit weights are undefined", expert_id=tv.expert_id
        )
    counts = torch.tensor([t.numel() for t in tv.deltas.values()], dtype=torch.long)
    return UnitStats(
        expert_id=tv.expert_id, units=tv.units, s_raw=s_raw, s=s_raw / total, n=counts
    )


def require_aligned(base: ModelParams, task_vectors: Iterable[TaskVector]) -> list[TaskVector]:
    """Check every task vector follows ``base``'s unit schema."""
    vectors = list(task_vectors)
    if not vectors:
        raise SchemaMismatchError("At least one task vector is required")
    for tv in vectors:
        if tv.config != base.config or tv.units != base.units:
            raise SchemaMismatchError(
                "Task vector schema differs from base", expert_id=tv.expert_id
            )
    return vectors


def combine_unit(
    base: torch.Tensor, terms: Iterable[tuple[torch.Tensor | float, torch.Tensor]]
) -> torch.Tensor:
    """θ_base + Σ_k c_k·τ_k, accumulated left to right in expert order."""
    result = base
    for coefficient, delta in terms:
        result = result + coefficient * delta
    return result


def add_deltas(
    base: ModelParams, deltas: Mapping[UnitId, torch.Tensor], scale: float = 1.0
) -> ModelParams:
    """θ_base + scale·Δ unitwise."""
    return base.map(lambda unit, t: combine_unit(t, [(scale, deltas[unit])]))
