"""Bit-exact EMCK persistence for parameters, coefficients and importance reports."""

from src.checkpoint.container import (
    MAGIC,
    VERSION,
    Container,
    decode,
    encode,
    read_container,
    write_container,
)
from src.checkpoint.io import (
    load_any,
    load_chunk_coefficients,
    load_importance,
    load_layer_coefficients,
    load_params,
    read_metadata,
    save_chunk_coefficients,
    save_importance,
    save_layer_coefficients,
    save_params,
)

__all__ = [
    "MAGIC",
    "VERSION",
    "Container",
    "decode",
    "encode",
    "load_any",
    "load_chunk_coefficients",
    "load_importance",
    "load_layer_coefficients",
    "load_params",
    "read_container",
    "read_metadata",
    "save_chunk_coefficients",
    "save_importance",
    "save_layer_coefficients",
    "save_params",
    "write_container",
]
