"""Layer-wise and chunk-wise merge coefficient tables."""

from collections.abc import Sequence
from dataclasses import dataclass

import torch

from src.autodiff import DTYPE, check_finite
from src.exceptions import SchemaMismatchError
from src.model import UnitId


@dataclass
class LayerCoefficients:
    """α[k][ℓ] over K experts × all mergeable units, with the prior ᾱ_k per expert."""

    expert_ids: list[str]
    units: list[UnitId]
    alpha: torch.Tensor
    prior: torch.Tensor

    def __post_init__(self) -> None:
        if tuple(self.alpha.shape) != (len(self.expert_ids), len(self.units)):
            raise SchemaMismatchError(
                f"Coefficient matrix {list(self.alpha.shape)} does not match "
                f"{len(self.expert_ids)} experts x {len(self.units)} units"
            )
        if tuple(self.prior.shape) != (len(self.expert_ids),):
            raise SchemaMismatchError("Prior must hold one value per expert")
        check_finite(self.alpha.detach(), "coefficients")
        check_finite(self.prior, "coefficient prior")

    @property
    def num_experts(self) -> int:
        return len(self.expert_ids)

    @classmethod
    def constant(
        cls,
        expert_ids: Sequence[str],
        units: Sequence[UnitId],
        values: Sequence[float],
        prior: Sequence[float] | None = None,
    ) -> "LayerCoefficients":
        """α[k][ℓ] = values[k] for every unit; prior defaults to the same values."""
        column = torch.tensor(list(values), dtype=DTYPE)
        return cls(
            expert_ids=list(expert_ids),
            units=list(units),
            alpha=column.unsqueeze(1).repeat(1, len(units)),
            prior=torch.tensor(list(prior if prior is not None else values), dtype=DTYPE),
        )

    def value(self, expert: int, unit: UnitId) -> float:
        return float(self.alpha[expert, self.units.index(unit)])

    def detach(self) -> "LayerCoefficients":
        return LayerCoefficients(
            list(self.expert_ids), list(self.units), self.alpha.detach().clone(), self.prior.clone()
        )


@dataclass
class ChunkCoefficients:
    """
    Ragged chunk coefficients α[k][ℓ][s] for chunked units and frozen scalars
    α_frozen[k][ℓ] for units the plan leaves at zero chunks.
    """

    expert_ids: list[str]
    units: list[UnitId]
    chunked: dict[UnitId, torch.Tensor]
    frozen: dict[UnitId, torch.Tensor]
    prior: torch.Tensor

    def __post_init__(self) -> None:
        k = len(self.expert_ids)
        if set(self.chunked) & set(self.frozen):
            raise SchemaMismatchError("A unit cannot be both chunked and frozen")
        if set(self.chunked) | set(self.frozen) != set(self.units):
            raise SchemaMismatchError("Chunk coefficients do not cover every unit")
        for unit, table in self.chunked.items():
            if table.dim() != 2 or table.shape[0] != k:
                raise SchemaMismatchError(f"Chunk table for {unit} must be [experts, chunks]")
            check_finite(table.detach(), f"chunk coefficients of {unit}")
        for unit, scalars in self.frozen.items():
            if tuple(scalars.shape) != (k,):
                raise SchemaMismatchError(f"Frozen scalars for {unit} must hold one per expert")

    @property
    def num_experts(self) -> int:
        return len(self.expert_ids)

    def chunk_counts(self) -> dict[UnitId, int]:
        return {u: (self.chunked[u].shape[1] if u in self.chunked else 0) for u in self.units}

    def trainable_count(self) -> int:
        """Trainable coefficients per expert."""
        return sum(t.shape[1] for t in self.chunked.values())

    def detach(self) -> "ChunkCoefficients":
        return ChunkCoefficients(
            expert_ids=list(self.expert_ids),
            units=list(self.units),
            chunked={u: t.detach().clone() for u, t in self.chunked.items()},
            frozen={u: t.detach().clone() for u, t in self.frozen.items()},
            prior=self.prior.clone(),
        )
