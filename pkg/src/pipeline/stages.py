"""Stage directories keyed by config hashes, with success records and FAILED markers."""

import hashlib
import json
from collections.abc import Callable
from pathlib import Path
from typing import Any, TypeVar

import structlog

from src.exceptions import ConfigError, ExpertMergeError
from src.reporting import write_text

logger = structlog.get_logger(__name__)

T = TypeVar("T")

RECORD = "stage.json"
FAILED = "FAILED"
RUN_CONFIG = "run_config.yaml"


def config_hash(payload: Any) -> str:
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


class StageStore:
    """
    Runs a stage only when its directory lacks a record with the same hash.

    A successful stage writes ``stage.json`` last; a failed one leaves a
    ``FAILED`` marker holding the error line, so partial outputs are never
    mistaken for a finished stage.
    """

    def __init__(self, root: Path, run_config_yaml: str):
        self.root = root
        self.run_config_yaml = run_config_yaml

    def path(self, *parts: str) -> Path:
        return self.root.joinpath(*parts)

    def recorded_hash(self, directory: Path) -> str | None:
        """Hash of the finished stage in ``directory``, or None if it never finished."""
        record = directory / RECORD
        if not record.exists() or (directory / FAILED).exists():
            return None
        try:
            return json.loads(record.read_text(encoding="utf-8")).get("hash")
        except (OSError, json.JSONDecodeError):
            return None

    def is_current(self, directory: Path, digest: str) -> bool:
        return self.recorded_hash(directory) == digest

    def run(
        self,
        name: str,
        directory: Path,
        digest: str,
        build: Callable[[Path], None],
        load: Callable[[Path], T],
        replace: bool = True,
    ) -> T:
        """
        Build into ``directory`` unless a matching record exists, then load the outputs.

        With ``replace=False`` a finished stage built from another
        configuration is refused instead of being rebuilt over.
        """
        recorded = self.recorded_hash(directory)
        if recorded == digest:
            logger.info("Stage up to date", stage=name, hash=digest)
            return load(directory)
        if recorded is not None and not replace:
            error = ConfigError(
                f"{directory} already holds {name} built from another configuration; "
                f"pass the flags it was built with (see its {RUN_CONFIG}) or rerun that stage",
                recorded=recorded,
                requested=digest,
            )
            error.stage = name
            raise error

        directory.mkdir(parents=True, exist_ok=True)
        (directory / RECORD).unlink(missing_ok=True)
        (directory / FAILED).unlink(missing_ok=True)
        write_text(directory / RUN_CONFIG, self.run_config_yaml)
        logger.info("Stage started", stage=name, hash=digest)
        try:
            build(directory)
            result = load(directory)
        except ExpertMergeError as exc:
            if exc.stage is None:
                exc.stage = name
            write_text(directory / FAILED, exc.one_line(exc.stage) + "\n")
            logger.error("Stage failed", stage=name, error=exc.error_class, message=exc.message)
            raise
        record = json.dumps({"hash": digest, "stage": name}, sort_keys=True)
        write_text(directory / RECORD, record + "\n")
        logger.info("Stage finished", stage=name, hash=digest)
        return result
