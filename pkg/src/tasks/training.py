"""Base pretraining, expert SFT and the mixture-training comparator."""

import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import structlog
import torch
from pydantic import BaseModel, Field

from src.config import Settings, get_settings
from src.exceptions import ConfigError, NumericError, ThresholdError
from src.model import ModelConfig, ModelParams, forward
from src.tasks import vocab
from src.tasks.evaluation import evaluate
from src.tasks.specs import Example, TaskSpec, derive_seed, gen_dataset

logger = structlog.get_logger(__name__)


class TrainHyper(BaseModel):
    """Optimizer and data settings for one training run (all weights trainable)."""

    steps: int = Field(default=600, ge=0, description="Optimizer steps")
    lr: float = Field(default=3e-3, gt=0, description="AdamW step size")
    weight_decay: float = Field(default=0.0, ge=0, description="AdamW decoupled weight decay")
    batch_size: int = Field(default=32, ge=1, description="Sequences per step")
    train_samples: int = Field(default=1024, ge=1, description="Labeled examples per task")
    grad_clip: float | None = Field(default=1.0, gt=0, description="Global grad-norm clip")
    seed: int = Field(default=0, description="Seed for initialization, data and batches")
    random_fraction: float = Field(
        default=0.5, ge=0, le=1, description="Share of random sequences in base pretraining"
    )
    accuracy_threshold: float = Field(
        default=0.9, ge=0, le=1, description="Minimum own-task accuracy for an expert"
    )
    eval_samples: int = Field(default=200, ge=1, description="Samples for the threshold check")


@dataclass
class TrainRun:
    """Trained parameters plus the per-step loss curve."""

    params: ModelParams
    losses: list[float] = field(default_factory=list)
    accuracy: float | None = None

    @property
    def initial_loss(self) -> float | None:
        return self.losses[0] if self.losses else None

    @property
    def final_loss(self) -> float | None:
        return self.losses[-1] if self.losses else None


@dataclass
class _Batch:
    inputs: torch.Tensor
    targets: torch.Tensor
    mask: torch.Tensor


def _sft_batch(examples: Sequence[Example]) -> _Batch:
    """Next-token batch where only answer positions carry loss."""
    sequences = torch.tensor([ex.sequence for ex in examples], dtype=torch.long)
    prompt_len = len(examples[0].prompt)
    mask = torch.zeros(sequences.shape[1] - 1, dtype=torch.bool)
    mask[prompt_len - 1:] = True
    return _Batch(sequences[:, :-1], sequences[:, 1:], mask.expand(len(examples), -1))


def _lm_batch(sequences: torch.Tensor) -> _Batch:
    mask = torch.ones(sequences.shape[0], sequences.shape[1] - 1, dtype=torch.bool)
    return _Batch(sequences[:, :-1], sequences[:, 1:], mask)


class TaskTrainer:
    """
    Trains every weight of a tiny transformer with AdamW.

    Runs are single-threaded and seeded: the same hyperparameters and
    inputs reproduce the same parameters bitwise.
    """

    def __init__(self, settings: Settings | None = None):
        self.settings = settings or get_settings()

    def _loss(self, params: ModelParams, batch: _Batch) -> torch.Tensor:
        logits = forward(params, batch.inputs).logits
        return torch.nn.functional.cross_entropy(logits[batch.mask], batch.targets[batch.mask])

    def _optimize(
        self,
        init: ModelParams,
        next_batch: Callable[[int], _Batch],
        hyper: TrainHyper,
        label: str,
    ) -> TrainRun:
        leaves = {unit: t.detach().clone().requires_grad_(True) for unit, t in init.items()}
        run = TrainRun(params=init.detach())
        if hyper.steps == 0:
            return run

        optimizer = torch.optim.AdamW(
            list(leaves.values()), lr=hyper.lr, weight_decay=hyper.weight_decay
        )
        for step in range(hyper.steps):
            optimizer.zero_grad()
            loss = self._loss(ModelParams(init.config, leaves), next_batch(step))
            value = float(loss)
            if not math.isfinite(value):
                raise NumericError("Training loss diverged", step=step, term="loss", run=label)
            run.losses.append(value)
            loss.backward()
            if hyper.grad_clip is not None:
                torch.nn.utils.clip_grad_norm_(list(leaves.values()), hyper.grad_clip)
            optimizer.step()
            if step % self.settings.log_every == 0:
                logger.debug("Training step", run=label, step=step, loss=value)

        run.params = ModelParams(init.config, {u: t.detach().clone() for u, t in leaves.items()})
        logger.info(
            "Training finished",
            run=label,
            steps=hyper.steps,
            initial_loss=run.initial_loss,
            final_loss=run.final_loss,
        )
        return run

    def _sft_sampler(
        self, specs: Sequence[TaskSpec], hyper: TrainHyper, config: ModelConfig, label: str
    ) -> Callable[[int], _Batch]:
        datasets = [
            gen_dataset(spec, hyper.train_samples, derive_seed(hyper.seed, label, spec.task_id),
                        config.max_seq_len)
            for spec in specs
        ]
        generator = torch.Generator().manual_seed(derive_seed(hyper.seed, label, "batches"))

        def next_batch(step: int) -> _Batch:
            # task formats have different lengths, so each step draws from one task
            dataset = datasets[step % len(datasets)]
            picks = torch.randint(len(dataset), (hyper.batch_size,), generator=generator)
            return _sft_batch([dataset[i] for i in picks.tolist()])

        return next_batch

    def train_base(
        self, config: ModelConfig, corpora: Sequence[TaskSpec], hyper: TrainHyper
    ) -> TrainRun:
        """Next-token pretraining on task prompts (never answers) mixed with random sequences."""
        if not corpora:
            raise ConfigError("Base pretraining needs at least one task corpus")
        if config.vocab_size < vocab.MIN_VOCAB_SIZE:
            raise ConfigError(f"Vocabulary must hold at least {vocab.MIN_VOCAB_SIZE} tokens")
        for spec in corpora:
            if spec.prompt_len > config.max_seq_len:
                raise ConfigError(f"Task {spec.task_id} prompts exceed max_seq_len")

        generator = torch.Generator().manual_seed(derive_seed(hyper.seed, "base", "batches"))
        tags = {"modadd": vocab.TAG_ADD, "reverse": vocab.TAG_REVERSE, "parity": vocab.TAG_PARITY}

        def next_batch(step: int) -> _Batch:
            spec = corpora[step % len(corpora)]
            n_random = round(hyper.batch_size * hyper.random_fraction)
            rows = [list(spec.draw(generator).prompt) for _ in range(hyper.batch_size - n_random)]
            pool = torch.tensor(spec.random_prompt_tokens(), dtype=torch.long)
            for _ in range(n_random):
                picks = torch.randint(len(pool), (spec.prompt_len - 2,), generator=generator)
                rows.append([vocab.BOS, tags[spec.kind], *pool[picks].tolist()])
            return _lm_batch(torch.tensor(rows, dtype=torch.long))

        init = ModelParams.initialize(config, hyper.seed)
        return self._optimize(init, next_batch, hyper, "base")

    def train_expert(
        self, base: ModelParams, task: TaskSpec, hyper: TrainHyper, check_threshold: bool = True
    ) -> TrainRun:
        """Fine-tune all weights on one task, loss on answer tokens only."""
        sampler = self._sft_sampler([task], hyper, base.config, f"expert/{task.task_id}")
        run = self._optimize(base, sampler, hyper, f"expert/{task.task_id}")
        run.accuracy = self._check(run, [task], hyper, check_threshold, task.task_id)
        return run

    def train_mixture(
        self,
        base: ModelParams,
        tasks: Sequence[TaskSpec],
        hyper: TrainHyper,
        check_threshold: bool = True,
    ) -> TrainRun:
        """SFT on the union of all labeled task data."""
        if not tasks:
            raise ConfigError("Mixture training needs at least one task")
        sampler = self._sft_sampler(tasks, hyper, base.config, "mixture")
        run = self._optimize(base, sampler, hyper, "mixture")
        run.accuracy = self._check(run, tasks, hyper, check_threshold, "mixture")
        return run

    def _check(
        self,
        run: TrainRun,
        tasks: Sequence[TaskSpec],
        hyper: TrainHyper,
        enforce: bool,
        label: str,
    ) -> float:
        result = evaluate(run.params, tasks, hyper.eval_samples, derive_seed(hyper.seed, "check"))
        accuracy = result.macro_average
        logger.info("Trained model checked", run=label, accuracy=accuracy)
        if enforce and accuracy < hyper.accuracy_threshold:
            raise ThresholdError(
                f"Accuracy {accuracy:.4f} below threshold {hyper.accuracy_threshold}",
                run=label,
            )
        return accuracy
