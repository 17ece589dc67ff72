"""Task vectors, training-free baselines and learned-coefficient merging."""

from src.merging.alignment import (
    AlignConfig,
    AlignmentTerms,
    ExpertTargets,
    TrainLog,
    alignment_terms,
)
from src.merging.baselines import (
    DareConfig,
    TAConfig,
    TiesConfig,
    dare_preprocess,
    merge_task_arithmetic,
    merge_ties,
    merge_weight_average,
    ties_unit,
    trim_top_fraction,
    unit_seed,
)
from src.merging.chunking import ChunkPlan, allocate_chunks, chunk_all, chunk_shares, split_sizes
from src.merging.coefficients import ChunkCoefficients, LayerCoefficients
from src.merging.expert_merging import (
    alignment_loss,
    apply_coefficients,
    fit,
    layer_regularizer,
    prior_init,
    ta_grid_init,
)
from src.merging.expert_merging_pp import (
    PlusPlusConfig,
    RefinementVerdict,
    apply_chunk_coefficients,
    chunk_regularizer,
    fit_pp,
    frozen_plan,
    init_chunk_coefficients,
    plan_chunks,
    review_refinement,
)
from src.merging.importance import STAGES, ImportanceReport, compute_importance, stage_of
from src.merging.task_vectors import (
    TaskVector,
    UnitStats,
    add_deltas,
    combine_unit,
    compute_task_vector,
    require_aligned,
    unit_stats,
)
from src.merging.trainer import CoefficientTrainer

__all__ = [
    "STAGES",
    "AlignConfig",
    "AlignmentTerms",
    "ChunkCoefficients",
    "ChunkPlan",
    "CoefficientTrainer",
    "DareConfig",
    "ExpertTargets",
    "ImportanceReport",
    "LayerCoefficients",
    "PlusPlusConfig",
    "RefinementVerdict",
    "TAConfig",
    "TaskVector",
    "TiesConfig",
    "TrainLog",
    "UnitStats",
    "add_deltas",
    "alignment_loss",
    "alignment_terms",
    "allocate_chunks",
    "apply_chunk_coefficients",
    "apply_coefficients",
    "chunk_all",
    "chunk_regularizer",
    "chunk_shares",
    "combine_unit",
    "compute_importance",
    "compute_task_vector",
    "dare_preprocess",
    "fit",
    "fit_pp",
    "frozen_plan",
    "init_chunk_coefficients",
    "layer_regularizer",
    "merge_task_arithmetic",
    "merge_ties",
    "merge_weight_average",
    "plan_chunks",
    "prior_init",
    "require_aligned",
    "review_refinement",
    "split_sizes",
    "stage_of",
    "ta_grid_init",
    "ties_unit",
    "trim_top_fraction",
    "unit_seed",
    "unit_stats",
]
