"""Run configuration, cached stages and the end-to-end pipeline."""

from src.pipeline.config import (
    ABLATIONS,
    MERGE_METHODS,
    MergeSettings,
    RunConfig,
    build_run_config,
    deep_merge,
    load_run_config,
)
from src.pipeline.runner import SWEEP_AXES, Pipeline, PipelineResult, run_pipeline
from src.pipeline.stages import FAILED, RECORD, RUN_CONFIG, StageStore, config_hash

__all__ = [
    "ABLATIONS",
    "FAILED",
    "MERGE_METHODS",
    "RECORD",
    "RUN_CONFIG",
    "SWEEP_AXES",
    "MergeSettings",
    "Pipeline",
    "PipelineResult",
    "RunConfig",
    "StageStore",
    "build_run_config",
    "config_hash",
    "deep_merge",
    "load_run_config",
    "run_pipeline",
]
