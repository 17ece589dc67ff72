"""Adam loop over merge coefficients with best-iterate tracking."""

import math
from collections.abc import Callable

import structlog
import torch

from src.config import Settings, get_settings
from src.exceptions import NumericError
from src.merging.alignment import AlignConfig, AlignmentTerms, TrainLog

logger = structlog.get_logger(__name__)


class CoefficientTrainer:
    """
    Minimizes an alignment objective over coefficient leaves only.

    Base, expert and task-vector tensors are constants of the graph; the
    optimizer state is owned by this trainer for the duration of one run.
    """

    def __init__(self, cfg: AlignConfig, settings: Settings | None = None):
        self.cfg = cfg
        self.settings = settings or get_settings()

    def _evaluate(self, evaluate: Callable[[], AlignmentTerms], step: int) -> AlignmentTerms:
        try:
            terms = evaluate()
        except NumericError as exc:
            raise NumericError(
                f"Non-finite alignment loss: {exc.message}",
                step=step,
                term=exc.context.get("term", "unknown"),
            ) from exc
        offender = terms.finite_or_offender()
        if offender is not None:
            raise NumericError("Non-finite alignment loss", step=step, term=offender)
        return terms

    def optimize(
        self,
        leaves: list[torch.Tensor],
        evaluate: Callable[[], AlignmentTerms],
        task_ids: list[str],
        snapshot: Callable[[], torch.Tensor],
        label: str = "fit",
    ) -> TrainLog:
        """
        Run ``cfg.steps`` Adam steps and leave the leaves at the last iterate.

        With ``cfg.restore_best`` the lowest-objective iterate is copied back
        instead. Either way the log records the best step and ``final_gap``,
        the distance of the returned objective above the best one seen.
        """
        cfg = self.cfg
        log = TrainLog(task_ids=list(task_ids), snapshot_every=cfg.snapshot_every)
        torch.manual_seed(cfg.seed)

        if not leaves or cfg.steps == 0:
            with torch.no_grad():
                terms = self._evaluate(evaluate, 0)
            log.initial_total = log.final_total = log.best_total = float(terms.total)
            log.final_align = float(terms.align)
            log.snapshots.append((0, snapshot()))
            logger.info("Coefficient fit skipped", label=label, leaves=len(leaves), steps=cfg.steps)
            return log

        optimizer = torch.optim.Adam(leaves, lr=cfg.lr, betas=cfg.betas)
        scheduler = (
            torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=cfg.steps)
            if cfg.lr_schedule == "cosine"
            else None
        )
        best_total = math.inf
        best_state: list[torch.Tensor] = []
        for step in range(cfg.steps):
            optimizer.zero_grad()
            terms = self._evaluate(evaluate, step)
            log.record(terms)
            total = float(terms.total)
            if step == 0:
                log.initial_total = total
            if total < best_total:
                best_total, log.best_step = total, step
                if cfg.restore_best:
                    best_state = [leaf.detach().clone() for leaf in leaves]
            if step % cfg.snapshot_every == 0:
                log.snapshots.append((step, snapshot()))
            if step % self.settings.log_every == 0:
                logger.debug(
                    "Coefficient step",
                    label=label,
                    step=step,
                    total=total,
                    align=float(terms.align),
                    regularizer=float(terms.regularizer),
                    lr=optimizer.param_groups[0]["lr"],
                )
            if terms.total.requires_grad:
                terms.total.backward()
                optimizer.step()
                if scheduler is not None:
                    scheduler.step()

        with torch.no_grad():
            final = self._evaluate(evaluate, cfg.steps)
        final_total = float(final.total)
        if final_total <= best_total:
            best_total, log.best_step = final_total, cfg.steps
        if cfg.restore_best and log.best_step < cfg.steps:
            with torch.no_grad():
                for leaf, kept in zip(leaves, best_state):
                    leaf.copy_(kept)
                final = self._evaluate(evaluate, log.best_step)
            final_total = float(final.total)

        log.kept_step = log.best_step if cfg.restore_best else cfg.steps
        log.best_total = best_total
        log.final_total = final_total
        log.final_align = float(final.align)
        log.snapshots.append((cfg.steps, snapshot()))
        logger.info(
            "Coefficient fit finished",
            label=label,
            steps=cfg.steps,
            initial_total=log.initial_total,
            final_total=log.final_total,
            best_total=log.best_total,
            best_step=log.best_step,
            final_gap=log.final_gap,
            kept_step=log.kept_step,
        )
        return log
