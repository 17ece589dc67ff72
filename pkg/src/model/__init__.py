"""Tiny decoder-only transformer with a Q/K/V/O + Gate/Up/Down unit taxonomy."""

from src.model.config import ModelConfig, param_count
from src.model.params import ModelParams
from src.model.transformer import ForwardTrace, forward
from src.model.units import (
    ATTENTION_KINDS,
    BLOCK_KINDS,
    GLOBAL_KINDS,
    MLP_KINDS,
    UnitId,
    UnitKind,
)

__all__ = [
    "ATTENTION_KINDS",
    "BLOCK_KINDS",
    "GLOBAL_KINDS",
    "MLP_KINDS",
    "ForwardTrace",
    "ModelConfig",
    "ModelParams",
    "UnitId",
    "UnitKind",
    "forward",
    "param_count",
]
