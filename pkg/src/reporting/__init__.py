"""CSV and aligned-text analysis artifacts."""

from src.reporting.emit import (
    chunk_coefficient_table,
    emit_importance_tables,
    emit_results_table,
    emit_seed_table,
    importance_stage_kind_table,
    importance_unit_table,
    layer_coefficient_table,
    loss_curve_table,
    results_table,
    seed_table,
    share_tables,
    training_curve_table,
)
from src.reporting.tables import Table, format_number, write_table, write_text

__all__ = [
    "Table",
    "chunk_coefficient_table",
    "emit_importance_tables",
    "emit_results_table",
    "emit_seed_table",
    "format_number",
    "importance_stage_kind_table",
    "importance_unit_table",
    "layer_coefficient_table",
    "loss_curve_table",
    "results_table",
    "seed_table",
    "share_tables",
    "training_curve_table",
    "write_table",
    "write_text",
]
