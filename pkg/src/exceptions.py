"""Error hierarchy with stable error classes for scripting."""

from typing import Any


class ExpertMergeError(Exception):
    """Base error. ``error_class`` is one of CONFIG, IO, NUMERIC, THRESHOLD."""

    error_class = "CONFIG"

    def __init__(self, message: str, **context: Any):
        super().__init__(message)
        self.message = message
        self.context = context
        self.stage: str | None = None

    def one_line(self, stage: str | None = None) -> str:
        """Single machine-parseable line, e.g. ``error=IO stage=merge message="..."``."""
        parts = [f"error={self.error_class}"]
        if stage:
            parts.append(f"stage={stage}")
        for key, value in sorted(self.context.items()):
            parts.append(f"{key}={value}")
        escaped = self.message.replace("\n", " ").replace('"', "'")
        parts.append(f'message="{escaped}"')
        return " ".join(parts)


class ConfigError(ExpertMergeError):
    """Invalid configuration or arguments."""

    error_class = "CONFIG"


class SchemaMismatchError(ConfigError):
    """Two parameter sets, task vectors or coefficient tables disagree on units."""


class CheckpointError(ExpertMergeError):
    """Reading or writing a checkpoint failed."""

    error_class = "IO"


class CheckpointFormatError(CheckpointError):
    """Bad magic, unknown version or unparsable header."""


class CheckpointTruncatedError(CheckpointError):
    """Payload shorter than the header declares."""


class CheckpointConsistencyError(CheckpointError):
    """Header shapes, offsets and payload size disagree."""


class NumericError(ExpertMergeError):
    """Non-finite values or shape errors in numerical code."""

    error_class = "NUMERIC"


class DegenerateInputError(NumericError):
    """A normalization is undefined, e.g. an all-zero vector."""


class ThresholdError(ExpertMergeError):
    """A trained model failed its configured accuracy threshold."""

    error_class = "THRESHOLD"
