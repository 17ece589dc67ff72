"""Exact-match evaluation with greedy argmax decoding."""

from collections.abc import Sequence

import structlog
import torch
from pydantic import BaseModel, Field

from src.exceptions import ConfigError
from src.model import ModelParams, forward
from src.tasks.specs import Example, TaskSpec, derive_seed, gen_dataset

logger = structlog.get_logger(__name__)


class EvalResult(BaseModel):
    """Per-task exact-match accuracy and sample count, in task order."""

    task_ids: list[str] = Field(..., description="Tasks in evaluation order")
    accuracy: dict[str, float] = Field(..., description="Exact-match accuracy per task")
    counts: dict[str, int] = Field(..., description="Evaluated samples per task")

    @property
    def macro_average(self) -> float:
        """Unweighted mean of the per-task accuracies."""
        return sum(self.accuracy[t] for t in self.task_ids) / len(self.task_ids)

    def row(self) -> list[float]:
        return [self.accuracy[t] for t in self.task_ids] + [self.macro_average]


@torch.no_grad()
def greedy_decode(params: ModelParams, prompts: torch.Tensor, answer_len: int) -> torch.Tensor:
    """Append ``answer_len`` argmax tokens to a batch of equal-length prompts."""
    tokens = prompts
    for _ in range(answer_len):
        logits = forward(params, tokens).logits
        next_token = logits[:, -1, :].argmax(dim=-1, keepdim=True)
        tokens = torch.cat([tokens, next_token], dim=1)
    return tokens[:, prompts.shape[1]:]


def exact_match(params: ModelParams, examples: Sequence[Example], answer_len: int) -> float:
    prompts = torch.tensor([ex.prompt for ex in examples], dtype=torch.long)
    answers = torch.tensor([ex.answer for ex in examples], dtype=torch.long)
    predicted = greedy_decode(params, prompts, answer_len)
    return float((predicted == answers).all(dim=1).double().mean())


def evaluate(
    params: ModelParams, tasks: Sequence[TaskSpec], n_per_task: int, seed: int
) -> EvalResult:
    """Accuracy on ``n_per_task`` seeded examples of every task."""
    if not tasks:
        raise ConfigError("Evaluation needs at least one task")
    accuracy, counts = {}, {}
    for spec in tasks:
        examples = gen_dataset(
            spec, n_per_task, derive_seed(seed, "eval", spec.task_id), params.config.max_seq_len
        )
        accuracy[spec.task_id] = exact_match(params, examples, spec.answer_len)
        counts[spec.task_id] = len(examples)
    result = EvalResult(task_ids=[s.task_id for s in tasks], accuracy=accuracy, counts=counts)
    logger.info(
        "Model evaluated",
        fingerprint=params.fingerprint(),
        accuracy=accuracy,
        macro_average=result.macro_average,
    )
    return result
