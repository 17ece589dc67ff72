"""Mergeable-unit taxonomy: one named parameter tensor per unit."""

from dataclasses import dataclass
from enum import Enum


class UnitKind(str, Enum):
    """Submodule kinds. Block kinds mirror attention Q/K/V/O and MLP Gate/Up/Down."""

    ATTN_Q = "attn.q"
    ATTN_K = "attn.k"
    ATTN_V = "attn.v"
    ATTN_O = "attn.o"
    MLP_GATE = "mlp.gate"
    MLP_UP = "mlp.up"
    MLP_DOWN = "mlp.down"
    NORM1 = "norm1"
    NORM2 = "norm2"
    # Non-block units
    EMBED = "embed"
    POS_EMBED = "pos_embed"
    FINAL_NORM = "final_norm"
    HEAD = "head"


BLOCK_KINDS: tuple[UnitKind, ...] = (
    UnitKind.NORM1,
    UnitKind.ATTN_Q,
    UnitKind.ATTN_K,
    UnitKind.ATTN_V,
    UnitKind.ATTN_O,
    UnitKind.NORM2,
    UnitKind.MLP_GATE,
    UnitKind.MLP_UP,
    UnitKind.MLP_DOWN,
)
GLOBAL_KINDS: tuple[UnitKind, ...] = (
    UnitKind.EMBED,
    UnitKind.POS_EMBED,
    UnitKind.FINAL_NORM,
    UnitKind.HEAD,
)
ATTENTION_KINDS = frozenset(
    {UnitKind.ATTN_Q, UnitKind.ATTN_K, UnitKind.ATTN_V, UnitKind.ATTN_O}
)
MLP_KINDS = frozenset({UnitKind.MLP_GATE, UnitKind.MLP_UP, UnitKind.MLP_DOWN})


@dataclass(frozen=True)
class UnitId:
    """A block-local unit (``block`` set) or a global one (``block`` is None)."""

    block: int | None
    kind: UnitKind

    def __post_init__(self) -> None:
        if (self.block is None) != (self.kind in GLOBAL_KINDS):
            raise ValueError(f"Invalid unit: block={self.block} kind={self.kind.value}")

    @property
    def name(self) -> str:
        if self.block is None:
            return self.kind.value
        return f"blocks.{self.block}.{self.kind.value}"

    @classmethod
    def parse(cls, name: str) -> "UnitId":
        if name.startswith("blocks."):
            _, block, kind = name.split(".", 2)
            return cls(int(block), UnitKind(kind))
        return cls(None, UnitKind(name))

    def __str__(self) -> str:
        return self.name

    @property
    def sort_key(self) -> tuple[int, int]:
        if self.block is None:
            position = GLOBAL_KINDS.index(self.kind)
            # embeddings first, final norm and head last
            return (-1, position) if position < 2 else (1 << 30, position)
        return (self.block, BLOCK_KINDS.index(self.kind))
