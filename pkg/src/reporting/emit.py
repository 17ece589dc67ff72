"""Analysis artifacts: importance tables, results tables, coefficient dumps and curves."""

from collections.abc import Sequence
from pathlib import Path

import structlog

from src.exceptions import ConfigError
from src.merging.alignment import TrainLog
from src.merging.chunking import ChunkPlan
from src.merging.coefficients import ChunkCoefficients, LayerCoefficients
from src.merging.importance import STAGES, ImportanceReport, stage_of
from src.model import UnitKind
from src.reporting.tables import Table, write_table, write_text
from src.tasks.evaluation import EvalResult

logger = structlog.get_logger(__name__)


def _kinds_in_order(kinds: set[str]) -> list[str]:
    return [k.value for k in UnitKind if k.value in kinds]


def importance_stage_kind_table(report: ImportanceReport) -> Table:
    """Rows: stage; columns: submodule kind; cells: summed normalized importance."""
    grid = report.stage_kind_table()
    kinds = _kinds_in_order({kind for _, kind in grid})
    stages = [s for s in STAGES if any(stage == s for stage, _ in grid)]
    table = Table(["stage", *kinds, "total"])
    for stage in stages:
        values = [grid.get((stage, kind), 0.0) for kind in kinds]
        table.add(stage, *values, sum(values))
    column_totals = [sum(grid.get((s, kind), 0.0) for s in stages) for kind in kinds]
    table.add("total", *column_totals, sum(column_totals))
    return table


def importance_unit_table(report: ImportanceReport) -> Table:
    """Per-unit dump of I_ℓ, raw score and the per-expert factors."""
    columns = ["unit", "stage", "kind", "param_count", "raw", "importance"]
    for expert_id in report.expert_ids:
        columns += [f"alpha_abs.{expert_id}", f"weight.{expert_id}"]
    table = Table(columns)
    for j, unit in enumerate(report.units):
        factors = []
        for k in range(len(report.expert_ids)):
            factors += [float(report.alpha_abs[k, j]), float(report.weights[k, j])]
        table.add(
            unit.name,
            stage_of(unit, report.n_blocks),
            unit.kind.value,
            report.param_counts[j],
            float(report.raw[j]),
            float(report.importance[j]),
            *factors,
        )
    return table


def share_tables(report: ImportanceReport) -> tuple[Table, Table]:
    """Parameter, coefficient and importance shares by kind; coefficient and importance by stage."""
    params, coeffs, importance = (
        report.param_share_by_kind(),
        report.coefficient_share("kind"),
        report.by_kind(),
    )
    by_kind = Table(["kind", "param_share", "coefficient_share", "importance_share"])
    for kind in _kinds_in_order(set(params)):
        by_kind.add(kind, params[kind], coeffs.get(kind, 0.0), importance.get(kind, 0.0))

    stage_coeffs, stage_importance = report.coefficient_share("stage"), report.by_stage()
    by_stage = Table(["stage", "coefficient_share", "importance_share"])
    for stage in STAGES:
        if stage in stage_importance:
            by_stage.add(stage, stage_coeffs.get(stage, 0.0), stage_importance[stage])
    return by_kind, by_stage


def emit_importance_tables(
    report: ImportanceReport, out_dir: str | Path, raw: bool = False
) -> list[Path]:
    out_dir = Path(out_dir)
    by_kind, by_stage = share_tables(report)
    paths = [
        write_table(
            importance_stage_kind_table(report), out_dir / "importance_stage_kind.csv", raw
        ),
        write_table(importance_unit_table(report), out_dir / "importance_units.csv", raw),
        write_table(by_kind, out_dir / "shares_by_kind.csv", raw),
        write_table(by_stage, out_dir / "shares_by_stage.csv", raw),
    ]
    logger.info("Importance tables written", out_dir=str(out_dir), files=len(paths))
    return paths


def results_table(results: Sequence[tuple[str, EvalResult]]) -> Table:
    """Rows: methods; columns: tasks then the macro average."""
    if not results:
        raise ConfigError("Results table needs at least one method")
    task_ids = results[0][1].task_ids
    for method, result in results:
        if result.task_ids != task_ids:
            raise ConfigError(f"Method {method} was evaluated on different tasks")
    table = Table(["method", *task_ids, "avg"])
    for method, result in results:
        table.add(method, *result.row())
    return table


def emit_results_table(
    results: Sequence[tuple[str, EvalResult]],
    out_dir: str | Path,
    raw: bool = False,
    name: str = "results",
) -> list[Path]:
    """``<name>.csv`` plus the aligned ``<name>.txt`` rendering."""
    out_dir = Path(out_dir)
    table = results_table(results)
    paths = [
        write_table(table, out_dir / f"{name}.csv", raw),
        write_text(out_dir / f"{name}.txt", table.to_text(raw)),
    ]
    logger.info("Results table written", out_dir=str(out_dir), methods=len(results))
    return paths


def seed_table(per_seed: Sequence[tuple[int, Sequence[tuple[str, EvalResult]]]]) -> Table:
    """Rows: root seeds then their mean; columns: method labels; cells: macro average."""
    if not per_seed:
        raise ConfigError("Seed table needs at least one seed")
    labels = [label for label, _ in per_seed[0][1]]
    for seed, results in per_seed:
        if [label for label, _ in results] != labels:
            raise ConfigError(f"Seed {seed} produced different methods than seed {per_seed[0][0]}")
    table = Table(["seed", *labels])
    for seed, results in per_seed:
        table.add(f"seed={seed}", *[result.macro_average for _, result in results])
    means = [
        sum(results[j][1].macro_average for _, results in per_seed) / len(per_seed)
        for j in range(len(labels))
    ]
    table.add("mean", *means)
    return table


def emit_seed_table(
    per_seed: Sequence[tuple[int, Sequence[tuple[str, EvalResult]]]],
    out_dir: str | Path,
    raw: bool = False,
) -> list[Path]:
    out_dir = Path(out_dir)
    table = seed_table(per_seed)
    paths = [
        write_table(table, out_dir / "sweep_seed.csv", raw),
        write_text(out_dir / "sweep_seed.txt", table.to_text(raw)),
    ]
    logger.info("Seed table written", out_dir=str(out_dir), seeds=len(per_seed))
    return paths


def layer_coefficient_table(coeffs: LayerCoefficients, n_blocks: int) -> Table:
    table = Table(["unit", "stage", "kind", *[f"alpha.{e}" for e in coeffs.expert_ids]])
    for j, unit in enumerate(coeffs.units):
        values = [float(coeffs.alpha[k, j]) for k in range(coeffs.num_experts)]
        table.add(unit.name, stage_of(unit, n_blocks), unit.kind.value, *values)
    return table


def chunk_coefficient_table(coeffs: ChunkCoefficients, plan: ChunkPlan) -> Table:
    """One row per (unit, chunk); frozen units appear once with chunk ``frozen``."""
    table = Table(["unit", "chunk", "start", "end", *[f"alpha.{e}" for e in coeffs.expert_ids]])
    for unit, n in zip(plan.units, plan.param_counts):
        if unit in coeffs.frozen:
            values = [float(v) for v in coeffs.frozen[unit]]
            table.add(unit.name, "frozen", 0, n, *values)
            continue
        tab = coeffs.chunked[unit]
        for s, (start, end) in enumerate(plan.boundaries(unit)):
            table.add(unit.name, s, start, end, *[float(tab[k, s]) for k in range(tab.shape[0])])
    return table


def training_curve_table(log: TrainLog) -> Table:
    rows = log.rows()
    columns = ["step", "total", "align", "regularizer"]
    for task_id in log.task_ids:
        columns += [f"hidden.{task_id}", f"logit.{task_id}"]
    table = Table(columns)
    for row in rows:
        table.add(*[row[c] for c in columns])
    return table


def loss_curve_table(losses: Sequence[float]) -> Table:
    table = Table(["step", "loss"])
    for step, loss in enumerate(losses):
        table.add(step, float(loss))
    return table
