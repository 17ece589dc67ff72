"""Synthetic task specifications and seeded example generation."""

import hashlib
from dataclasses import dataclass
from typing import Literal

import torch
from pydantic import BaseModel, Field, model_validator

from src.exceptions import ConfigError
from src.tasks import vocab


@dataclass(frozen=True)
class Example:
    """One labeled example: prompt tokens and the answer tokens that follow them."""

    prompt: tuple[int, ...]
    answer: tuple[int, ...]

    @property
    def sequence(self) -> tuple[int, ...]:
        return self.prompt + self.answer


class TaskSpec(BaseModel):
    """
    Generator parameters for one task domain.

    Kinds:
    - ``modadd``: ``<add> a + b =`` -> digit of (a + b) mod m
    - ``reverse``: ``<rev> c1..cL =`` -> cL..c1
    - ``parity``: ``<par> b1..bW =`` -> odd / even
    """

    model_config = {"frozen": True}

    task_id: str = Field(..., description="Stable task identifier")
    kind: Literal["modadd", "reverse", "parity"] = Field(..., description="Generator family")
    modulus: int = Field(default=7, ge=2, le=vocab.NUM_DIGITS, description="Modulus m")
    length: int = Field(default=3, ge=1, description="String length for reversal")
    alphabet: int = Field(default=6, ge=2, le=vocab.NUM_LETTERS, description="Letters used")
    width: int = Field(default=4, ge=1, description="Bit count for parity")

    @model_validator(mode="after")
    def _check(self) -> "TaskSpec":
        if not self.task_id:
            raise ValueError("task_id must be non-empty")
        return self

    @property
    def prompt_len(self) -> int:
        if self.kind == "modadd":
            return 6
        if self.kind == "reverse":
            return 3 + self.length
        return 3 + self.width

    @property
    def answer_len(self) -> int:
        return self.length if self.kind == "reverse" else 1

    @property
    def sequence_len(self) -> int:
        return self.prompt_len + self.answer_len

    def draw(self, generator: torch.Generator) -> Example:
        def randint(high: int, size: int) -> list[int]:
            return torch.randint(high, (size,), generator=generator).tolist()

        if self.kind == "modadd":
            a, b = randint(self.modulus, 2)
            prompt = (
                vocab.BOS, vocab.TAG_ADD, vocab.digit(a), vocab.PLUS, vocab.digit(b), vocab.EQUALS
            )
            return Example(prompt, (vocab.digit((a + b) % self.modulus),))
        if self.kind == "reverse":
            letters = [vocab.letter(i) for i in randint(self.alphabet, self.length)]
            prompt = (vocab.BOS, vocab.TAG_REVERSE, *letters, vocab.EQUALS)
            return Example(prompt, tuple(reversed(letters)))
        bits = randint(2, self.width)
        prompt = (vocab.BOS, vocab.TAG_PARITY, *(vocab.digit(b) for b in bits), vocab.EQUALS)
        return Example(prompt, (vocab.ODD if sum(bits) % 2 else vocab.EVEN,))

    def random_prompt_tokens(self) -> list[int]:
        """Tokens that may appear in this task's prompts besides BOS and the tag."""
        if self.kind == "modadd":
            return [vocab.digit(i) for i in range(self.modulus)] + [vocab.PLUS, vocab.EQUALS]
        if self.kind == "reverse":
            return [vocab.letter(i) for i in range(self.alphabet)] + [vocab.EQUALS]
        return [vocab.digit(0), vocab.digit(1), vocab.EQUALS]


def derive_seed(seed: int, *labels: str) -> int:
    """Independent 63-bit stream seed for (seed, labels), stable across platforms."""
    digest = hashlib.sha256("/".join(labels).encode("utf-8")).digest()
    return (seed ^ int.from_bytes(digest[:8], "little")) & ((1 << 63) - 1)


def gen_dataset(spec: TaskSpec, n: int, seed: int, max_seq_len: int | None = None) -> list[Example]:
    """Reproducible labeled examples for ``spec``."""
    if n < 1:
        raise ConfigError(f"Dataset size must be >= 1, got {n}")
    if max_seq_len is not None and spec.sequence_len > max_seq_len:
        raise ConfigError(
            f"Task {spec.task_id} needs {spec.sequence_len} tokens, model allows {max_seq_len}"
        )
    generator = torch.Generator().manual_seed(seed)
    return [spec.draw(generator) for _ in range(n)]


DEFAULT_TASKS: tuple[TaskSpec, ...] = (
    TaskSpec(task_id="modadd", kind="modadd", modulus=7),
    TaskSpec(task_id="reverse", kind="reverse", length=3, alphabet=6),
    TaskSpec(task_id="parity", kind="parity", width=4),
)
