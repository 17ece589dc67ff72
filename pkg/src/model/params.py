"""Named-tensor parameter sets keyed by mergeable unit."""

import hashlib
import math
from collections.abc import Callable, Iterator, Mapping
from dataclasses import dataclass, field

import torch

from src.autodiff.tensor import DTYPE
from src.exceptions import SchemaMismatchError
from src.model.config import ModelConfig
from src.model.units import UnitId, UnitKind

_NORM_KINDS = {UnitKind.NORM1, UnitKind.NORM2, UnitKind.FINAL_NORM}
_RESIDUAL_OUT_KINDS = {UnitKind.ATTN_O, UnitKind.MLP_DOWN}


@dataclass
class ModelParams:
    """
    The full parameter set of one transformer (base, expert or merged).

    Tensors may require grad when they are functions of merge coefficients;
    the unit set and shapes always follow ``config.unit_shapes()``.
    """

    config: ModelConfig
    tensors: dict[UnitId, torch.Tensor] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        expected = self.config.unit_shapes()
        if set(self.tensors) != set(expected):
            missing = sorted(str(u) for u in set(expected) - set(self.tensors))
            extra = sorted(str(u) for u in set(self.tensors) - set(expected))
            raise SchemaMismatchError(
                "Parameter units do not match the model config",
                missing=",".join(missing) or "-",
                extra=",".join(extra) or "-",
            )
        for unit, shape in expected.items():
            if tuple(self.tensors[unit].shape) != shape:
                raise SchemaMismatchError(
                    f"Unit {unit} has shape {list(self.tensors[unit].shape)}, "
                    f"expected {list(shape)}"
                )
        # keep schema order stable for iteration
        self.tensors = {unit: self.tensors[unit] for unit in expected}

    @property
    def units(self) -> list[UnitId]:
        return list(self.tensors)

    def __getitem__(self, unit: UnitId) -> torch.Tensor:
        return self.tensors[unit]

    def __iter__(self) -> Iterator[UnitId]:
        return iter(self.tensors)

    def items(self) -> Iterator[tuple[UnitId, torch.Tensor]]:
        return iter(self.tensors.items())

    def map(self, fn: Callable[[UnitId, torch.Tensor], torch.Tensor]) -> "ModelParams":
        return ModelParams(self.config, {unit: fn(unit, t) for unit, t in self.tensors.items()})

    def detach(self) -> "ModelParams":
        return self.map(lambda _, t: t.detach().clone())

    def named(self) -> dict[str, torch.Tensor]:
        return {unit.name: t for unit, t in self.tensors.items()}

    @classmethod
    def from_named(cls, config: ModelConfig, named: Mapping[str, torch.Tensor]) -> "ModelParams":
        return cls(config, {UnitId.parse(name): t for name, t in named.items()})

    def require_same_schema(self, other: "ModelParams") -> None:
        if self.config != other.config:
            raise SchemaMismatchError("Model configs differ")

    def fingerprint(self) -> str:
        """Short sha256 over unit names and raw little-endian bytes."""
        digest = hashlib.sha256()
        for unit, tensor in self.tensors.items():
            digest.update(unit.name.encode("utf-8"))
            digest.update(tensor.detach().to(DTYPE).contiguous().numpy().astype("<f8").tobytes())
        return digest.hexdigest()[:16]

    def total_param_count(self) -> int:
        return sum(t.numel() for t in self.tensors.values())

    def bitwise_equal(self, other: "ModelParams") -> bool:
        if self.config != other.config:
            return False
        return all(torch.equal(self[u], other[u]) for u in self.units)

    @classmethod
    def zeros(cls, config: ModelConfig) -> "ModelParams":
        shapes = config.unit_shapes()
        return cls(config, {u: torch.zeros(s, dtype=DTYPE) for u, s in shapes.items()})

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int) -> "ModelParams":
        """Seeded random initialization; norm scales start at one."""
        generator = torch.Generator().manual_seed(seed)
        tensors: dict[UnitId, torch.Tensor] = {}
        residual_scale = 1.0 / math.sqrt(2.0 * config.n_blocks)
        for unit, shape in config.unit_shapes().items():
            if unit.kind in _NORM_KINDS:
                tensors[unit] = torch.ones(shape, dtype=DTYPE)
                continue
            if unit.kind in (UnitKind.EMBED, UnitKind.POS_EMBED):
                std = 1.0
            else:
                std = 1.0 / math.sqrt(shape[0])
                if unit.kind in _RESIDUAL_OUT_KINDS:
                    std *= residual_scale
            tensors[unit] = torch.randn(shape, generator=generator, dtype=DTYPE) * std
        return cls(config, tensors)
