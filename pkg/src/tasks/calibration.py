"""Unlabeled, task-partitioned calibration sets."""

from collections.abc import Sequence
from dataclasses import dataclass

import structlog

from src.exceptions import ConfigError
from src.tasks.specs import TaskSpec, gen_dataset

logger = structlog.get_logger(__name__)


@dataclass
class CalibrationSet:
    """Per task k, a list D_k of prompt-only token sequences (no answers)."""

    task_ids: list[str]
    samples: dict[str, list[tuple[int, ...]]]

    def __post_init__(self) -> None:
        if set(self.task_ids) != set(self.samples):
            raise ConfigError("Calibration tasks and samples disagree")
        for task_id in self.task_ids:
            if not self.samples[task_id]:
                raise ConfigError(f"Calibration set for task {task_id} is empty")

    def for_task(self, task_id: str) -> list[tuple[int, ...]]:
        return self.samples[task_id]

    def sizes(self) -> dict[str, int]:
        return {task_id: len(self.samples[task_id]) for task_id in self.task_ids}


def build_calibration(
    specs: Sequence[TaskSpec], n_per_task: int, seed: int, max_seq_len: int | None = None
) -> CalibrationSet:
    """Draw N prompts per task from the task's input distribution, dropping the answers."""
    if n_per_task < 1:
        raise ConfigError(f"Calibration needs at least one sample per task, got {n_per_task}")
    samples = {}
    for index, spec in enumerate(specs):
        examples = gen_dataset(spec, n_per_task, seed + 7919 * (index + 1), max_seq_len)
        samples[spec.task_id] = [example.prompt for example in examples]
    calib = CalibrationSet(task_ids=[s.task_id for s in specs], samples=samples)
    logger.info("Calibration set built", sizes=calib.sizes(), seed=seed)
    return calib
