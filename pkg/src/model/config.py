"""Model configuration and the per-unit shape schema derived from it."""

from pydantic import BaseModel, Field, model_validator

from src.exceptions import ConfigError
from src.model.units import BLOCK_KINDS, UnitId, UnitKind


class ModelConfig(BaseModel):
    """Decoder-only transformer hyperparameters. Defaults are the desk-scale config."""

    model_config = {"frozen": True}

    vocab_size: int = Field(default=32, ge=1, description="Vocabulary size")
    d_model: int = Field(default=32, ge=1, description="Residual stream width")
    n_heads: int = Field(default=2, ge=1, description="Attention heads")
    n_blocks: int = Field(default=4, ge=1, description="Transformer blocks")
    d_mlp: int = Field(default=64, ge=1, description="Gated MLP hidden width")
    max_seq_len: int = Field(default=24, ge=1, description="Longest accepted sequence")
    norm_eps: float = Field(default=1e-6, gt=0, description="RMSNorm epsilon")

    @model_validator(mode="after")
    def _heads_divide_width(self) -> "ModelConfig":
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})"
            )
        return self

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def unit_shapes(self) -> dict[UnitId, tuple[int, ...]]:
        """Ordered unit -> shape schema; a pure function of the config."""
        d, m = self.d_model, self.d_mlp
        block_shapes = {
            UnitKind.NORM1: (d,),
            UnitKind.ATTN_Q: (d, d),
            UnitKind.ATTN_K: (d, d),
            UnitKind.ATTN_V: (d, d),
            UnitKind.ATTN_O: (d, d),
            UnitKind.NORM2: (d,),
            UnitKind.MLP_GATE: (d, m),
            UnitKind.MLP_UP: (d, m),
            UnitKind.MLP_DOWN: (m, d),
        }
        shapes: dict[UnitId, tuple[int, ...]] = {
            UnitId(None, UnitKind.EMBED): (self.vocab_size, d),
            UnitId(None, UnitKind.POS_EMBED): (self.max_seq_len, d),
        }
        for block in range(self.n_blocks):
            for kind in BLOCK_KINDS:
                shapes[UnitId(block, kind)] = block_shapes[kind]
        shapes[UnitId(None, UnitKind.FINAL_NORM)] = (d,)
        shapes[UnitId(None, UnitKind.HEAD)] = (d, self.vocab_size)
        return shapes

    def units(self) -> list[UnitId]:
        return list(self.unit_shapes())

    def param_count(self, unit: UnitId) -> int:
        """Number of scalar parameters in ``unit``."""
        shapes = self.unit_shapes()
        if unit not in shapes:
            raise ConfigError(f"Unknown unit for this config: {unit}", unit=unit.name)
        count = 1
        for extent in shapes[unit]:
            count *= extent
        return count

    def total_param_count(self) -> int:
        return sum(self.param_count(unit) for unit in self.units())


def param_count(config: ModelConfig, unit: UnitId) -> int:
    """Number of scalar parameters in ``unit`` under ``config``."""
    return config.param_count(unit)


__all__ = ["ModelConfig", "param_count"]
