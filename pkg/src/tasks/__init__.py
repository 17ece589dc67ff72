"""Synthetic task suite: datasets, calibration sets, training and evaluation."""

from src.tasks.calibration import CalibrationSet, build_calibration
from src.tasks.evaluation import EvalResult, evaluate, greedy_decode
from src.tasks.specs import DEFAULT_TASKS, Example, TaskSpec, derive_seed, gen_dataset
from src.tasks.training import TaskTrainer, TrainHyper, TrainRun

__all__ = [
    "DEFAULT_TASKS",
    "CalibrationSet",
    "EvalResult",
    "Example",
    "TaskSpec",
    "TaskTrainer",
    "TrainHyper",
    "TrainRun",
    "build_calibration",
    "derive_seed",
    "evaluate",
    "gen_dataset",
    "greedy_decode",
]
