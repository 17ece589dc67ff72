"""Typed save/load for parameters, coefficients and importance reports."""

from pathlib import Path
from typing import Any

import torch

from src.checkpoint.container import Container, read_container, write_container
from src.exceptions import CheckpointConsistencyError, CheckpointFormatError, ExpertMergeError
from src.merging.chunking import ChunkPlan
from src.merging.coefficients import ChunkCoefficients, LayerCoefficients
from src.merging.importance import ImportanceReport
from src.model import ModelConfig, ModelParams, UnitId

KIND_MODEL = "model_params"
KIND_LAYER = "layer_coefficients"
KIND_CHUNK = "chunk_coefficients"
KIND_IMPORTANCE = "importance_report"


def _expect(container: Container, kind: str) -> None:
    if container.kind != kind:
        raise CheckpointFormatError(
            f"Checkpoint holds {container.kind or 'nothing'}, expected {kind}"
        )


def _tensor(container: Container, name: str) -> torch.Tensor:
    try:
        return container.tensors[name]
    except KeyError:
        raise CheckpointConsistencyError(f"Checkpoint is missing tensor {name}") from None


def _units(metadata: dict[str, Any]) -> list[UnitId]:
    try:
        return [UnitId.parse(name) for name in metadata["units"]]
    except (KeyError, ValueError) as exc:
        raise CheckpointConsistencyError(f"Bad unit list in checkpoint: {exc}") from exc


def _build(kind: str, factory):
    """Run a constructor; validation failures surface as consistency errors."""
    try:
        return factory()
    except CheckpointConsistencyError:
        raise
    except (ExpertMergeError, KeyError, TypeError, ValueError) as exc:
        raise CheckpointConsistencyError(f"Inconsistent {kind} checkpoint: {exc}") from exc


def save_params(
    params: ModelParams, path: str | Path, metadata: dict[str, Any] | None = None
) -> Path:
    meta = {**(metadata or {}), "kind": KIND_MODEL, "model_config": params.config.model_dump()}
    return write_container(path, meta, list(params.named().items()))


def load_params(path: str | Path) -> ModelParams:
    container = read_container(path)
    _expect(container, KIND_MODEL)
    return _build(
        KIND_MODEL,
        lambda: ModelParams.from_named(
            ModelConfig(**container.metadata["model_config"]), container.tensors
        ),
    )


def save_layer_coefficients(
    coeffs: LayerCoefficients, path: str | Path, metadata: dict[str, Any] | None = None
) -> Path:
    meta = {
        **(metadata or {}),
        "kind": KIND_LAYER,
        "expert_ids": list(coeffs.expert_ids),
        "units": [u.name for u in coeffs.units],
    }
    return write_container(path, meta, [("alpha", coeffs.alpha), ("prior", coeffs.prior)])


def load_layer_coefficients(path: str | Path) -> LayerCoefficients:
    container = read_container(path)
    _expect(container, KIND_LAYER)
    return _build(
        KIND_LAYER,
        lambda: LayerCoefficients(
            expert_ids=list(container.metadata["expert_ids"]),
            units=_units(container.metadata),
            alpha=_tensor(container, "alpha"),
            prior=_tensor(container, "prior"),
        ),
    )


def save_chunk_coefficients(
    coeffs: ChunkCoefficients,
    plan: ChunkPlan,
    path: str | Path,
    metadata: dict[str, Any] | None = None,
) -> Path:
    """Chunk tables and frozen scalars in unit order, with the plan that shapes them."""
    meta = {
        **(metadata or {}),
        "kind": KIND_CHUNK,
        "expert_ids": list(coeffs.expert_ids),
        "units": [u.name for u in coeffs.units],
        "plan": {
            "budget": plan.budget,
            "kappa": plan.kappa,
            "counts": list(plan.counts),
            "param_counts": list(plan.param_counts),
        },
    }
    tensors = [("prior", coeffs.prior)]
    for unit in coeffs.units:
        if unit in coeffs.chunked:
            tensors.append((f"chunked/{unit.name}", coeffs.chunked[unit]))
        else:
            tensors.append((f"frozen/{unit.name}", coeffs.frozen[unit]))
    return write_container(path, meta, tensors)


def load_chunk_coefficients(path: str | Path) -> tuple[ChunkCoefficients, ChunkPlan]:
    container = read_container(path)
    _expect(container, KIND_CHUNK)
    meta = container.metadata

    def build() -> tuple[ChunkCoefficients, ChunkPlan]:
        units = _units(meta)
        plan = ChunkPlan(units=units, **meta["plan"])
        chunked, frozen = {}, {}
        for unit in units:
            if f"chunked/{unit.name}" in container.tensors:
                chunked[unit] = container.tensors[f"chunked/{unit.name}"]
            else:
                frozen[unit] = _tensor(container, f"frozen/{unit.name}")
        coeffs = ChunkCoefficients(
            expert_ids=list(meta["expert_ids"]),
            units=units,
            chunked=chunked,
            frozen=frozen,
            prior=_tensor(container, "prior"),
        )
        if coeffs.chunk_counts() != dict(zip(plan.units, plan.counts)):
            raise CheckpointConsistencyError("Chunk tables disagree with the stored plan")
        return coeffs, plan

    return _build(KIND_CHUNK, build)


def save_importance(
    report: ImportanceReport, path: str | Path, metadata: dict[str, Any] | None = None
) -> Path:
    meta = {
        **(metadata or {}),
        "kind": KIND_IMPORTANCE,
        "expert_ids": list(report.expert_ids),
        "units": [u.name for u in report.units],
        "n_blocks": report.n_blocks,
        "param_counts": list(report.param_counts),
    }
    tensors = [
        ("alpha_abs", report.alpha_abs),
        ("weights", report.weights),
        ("raw", report.raw),
        ("importance", report.importance),
    ]
    return write_container(path, meta, tensors)


def load_importance(path: str | Path) -> ImportanceReport:
    container = read_container(path)
    _expect(container, KIND_IMPORTANCE)
    meta = container.metadata
    return _build(
        KIND_IMPORTANCE,
        lambda: ImportanceReport(
            expert_ids=list(meta["expert_ids"]),
            units=_units(meta),
            n_blocks=int(meta["n_blocks"]),
            alpha_abs=_tensor(container, "alpha_abs"),
            weights=_tensor(container, "weights"),
            param_counts=[int(n) for n in meta["param_counts"]],
            raw=_tensor(container, "raw"),
            importance=_tensor(container, "importance"),
        ),
    )


def load_any(path: str | Path):
    """Load whatever the file's kind tag says it holds."""
    kind = read_container(path).kind
    loaders = {
        KIND_MODEL: load_params,
        KIND_LAYER: load_layer_coefficients,
        KIND_CHUNK: load_chunk_coefficients,
        KIND_IMPORTANCE: load_importance,
    }
    if kind not in loaders:
        raise CheckpointFormatError(f"Unknown checkpoint kind {kind!r}")
    return loaders[kind](path)


def read_metadata(path: str | Path) -> dict[str, Any]:
    return read_container(path).metadata
