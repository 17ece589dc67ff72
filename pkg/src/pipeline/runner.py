"""End-to-end pipeline: tasks, base, experts, merges, importance, evaluation, reports."""

import json
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Any

import structlog
import torch

import src
from src.checkpoint import (
    load_importance,
    load_layer_coefficients,
    load_params,
    save_chunk_coefficients,
    save_importance,
    save_layer_coefficients,
    save_params,
)
from src.config import Settings, get_settings
from src.exceptions import ConfigError, ExpertMergeError
from src.merging import (
    DareConfig,
    ExpertTargets,
    TAConfig,
    TiesConfig,
    TrainLog,
    apply_chunk_coefficients,
    apply_coefficients,
    compute_importance,
    compute_task_vector,
    dare_preprocess,
    fit,
    fit_pp,
    init_chunk_coefficients,
    merge_task_arithmetic,
    merge_ties,
    merge_weight_average,
    plan_chunks,
    prior_init,
    review_refinement,
    ta_grid_init,
    unit_stats,
)
from src.merging.task_vectors import TaskVector
from src.model import ModelParams
from src.pipeline.config import ABLATIONS, TUNED_METHODS, RunConfig
from src.pipeline.stages import StageStore, config_hash
from src.reporting import (
    Table,
    chunk_coefficient_table,
    emit_importance_tables,
    emit_results_table,
    emit_seed_table,
    layer_coefficient_table,
    loss_curve_table,
    training_curve_table,
    write_table,
    write_text,
)
from src.tasks import (
    CalibrationSet,
    EvalResult,
    TaskSpec,
    TaskTrainer,
    TrainHyper,
    build_calibration,
    derive_seed,
    evaluate,
    gen_dataset,
)
from src.tasks.vocab import decode

logger = structlog.get_logger(__name__)

MODEL_FILE = "model.emck"
SWEEP_AXES = ("gamma", "samples", "seed")


@dataclass
class PipelineResult:
    """Exit status, produced artifacts and the error line of a failed run."""

    status: int
    artifacts: list[Path] = field(default_factory=list)
    error: str | None = None


def _dump(model: Any) -> Any:
    return model.model_dump(mode="json")


def _write_json(path: Path, payload: dict[str, Any]) -> Path:
    return write_text(path, json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _fit_summary(log: TrainLog, **extra: Any) -> dict[str, Any]:
    return {
        "initial_total": log.initial_total,
        "final_total": log.final_total,
        "final_align": log.final_align,
        "best_total": log.best_total,
        "best_step": log.best_step,
        "kept_step": log.kept_step,
        "steps": log.steps,
        **extra,
    }


class Pipeline:
    """
    Stage runner for one RunConfig.

    ``variant`` names an alternative merge configuration (ablation or sweep
    point); it only changes where merge outputs go, so base and expert
    stages are shared with the main run through their config hashes.
    With ``replace_merges=False`` an existing merge built from other
    settings is refused rather than rebuilt.
    """

    def __init__(
        self,
        config: RunConfig,
        settings: Settings | None = None,
        variant: str | None = None,
        replace_merges: bool = True,
    ):
        self.config = config
        self.settings = settings or get_settings()
        self.variant = variant
        self.replace_merges = replace_merges
        self.root = Path(config.output_dir)
        self.store = StageStore(self.root, config.to_yaml())
        self.trainer = TaskTrainer(self.settings)
        self._hashes: dict[str, str] = {}
        self._models: dict[str, ModelParams] = {}
        self._calib: CalibrationSet | None = None

    # seeds

    def _hyper(self, hyper: TrainHyper, *labels: str) -> TrainHyper:
        return hyper.model_copy(
            update={"seed": derive_seed(self.config.seed, *labels, str(hyper.seed))}
        )

    @property
    def test_seed(self) -> int:
        return derive_seed(self.config.seed, "test")

    @property
    def validation_seed(self) -> int:
        return derive_seed(self.config.seed, "validation")

    # tasks

    def gen_tasks(self, preview: int = 5) -> list[TaskSpec]:
        digest = config_hash(
            {"tasks": [_dump(t) for t in self.config.tasks], "seed": self.config.seed}
        )

        def build(directory: Path) -> None:
            payload = {"seed": self.config.seed, "tasks": [_dump(t) for t in self.config.tasks]}
            write_text(directory / "tasks.yaml", self.config.to_yaml())
            _write_json(directory / "tasks.json", payload)
            table = Table(["task", "prompt", "answer"])
            for spec in self.config.tasks:
                for ex in gen_dataset(spec, preview, derive_seed(self.test_seed, spec.task_id)):
                    table.add(spec.task_id, decode(list(ex.prompt)), decode(list(ex.answer)))
            write_table(table, directory / "preview.csv")

        return self.store.run(
            "gen-tasks", self.store.path("tasks"), digest, build, lambda _: list(self.config.tasks)
        )

    # training

    def _train_stage(self, name: str, directory: Path, digest: str, train) -> ModelParams:
        def build(out: Path) -> None:
            run = train()
            metadata = {"stage": name, "hash": digest, "accuracy": run.accuracy}
            save_params(run.params, out / MODEL_FILE, metadata)
            write_table(loss_curve_table(run.losses), out / "loss_curve.csv")

        params = self.store.run(
            name, directory, digest, build, lambda d: load_params(d / MODEL_FILE)
        )
        self._hashes[name] = digest
        self._models[name] = params
        return params

    def base(self) -> ModelParams:
        if "base" in self._models:
            return self._models["base"]
        cfg = self.config
        digest = config_hash(
            {
                "model": _dump(cfg.model),
                "tasks": [_dump(t) for t in cfg.tasks],
                "hyper": _dump(cfg.base_hyper),
                "seed": cfg.seed,
            }
        )
        hyper = self._hyper(cfg.base_hyper, "base")
        return self._train_stage(
            "base",
            self.store.path("base"),
            digest,
            lambda: self.trainer.train_base(cfg.model, cfg.tasks, hyper),
        )

    def expert(self, spec: TaskSpec) -> ModelParams:
        name = f"expert:{spec.task_id}"
        if name in self._models:
            return self._models[name]
        base = self.base()
        digest = config_hash(
            {
                "base": self._hashes["base"],
                "task": _dump(spec),
                "hyper": _dump(self.config.expert_hyper),
                "seed": self.config.seed,
            }
        )
        hyper = self._hyper(self.config.expert_hyper, "expert", spec.task_id)
        return self._train_stage(
            name,
            self.store.path("experts", spec.task_id),
            digest,
            lambda: self.trainer.train_expert(base, spec, hyper),
        )

    def experts(self) -> list[ModelParams]:
        return [self.expert(spec) for spec in self.config.tasks]

    def mixture(self) -> ModelParams:
        if "mixture" in self._models:
            return self._models["mixture"]
        base = self.base()
        digest = config_hash(
            {
                "base": self._hashes["base"],
                "tasks": [_dump(t) for t in self.config.tasks],
                "hyper": _dump(self.config.mixture_hyper),
                "seed": self.config.seed,
            }
        )
        hyper = self._hyper(self.config.mixture_hyper, "mixture")
        return self._train_stage(
            "mixture",
            self.store.path("mixture"),
            digest,
            lambda: self.trainer.train_mixture(base, self.config.tasks, hyper),
        )

    # merging inputs

    def task_vectors(self) -> list[TaskVector]:
        base = self.base()
        return [
            compute_task_vector(base, expert, spec.task_id)
            for spec, expert in zip(self.config.tasks, self.experts())
        ]

    def calibration(self) -> CalibrationSet:
        if self._calib is None:
            self._calib = build_calibration(
                self.config.tasks,
                self.config.calib_samples,
                derive_seed(self.config.seed, "calibration"),
                self.config.model.max_seq_len,
            )
        return self._calib

    def _merge_dir(self, method: str) -> Path:
        name = method if self.variant is None else f"{method}@{self.variant}"
        return self.store.path("merges", name)

    def merge_label(self, method: str) -> str:
        return method if self.variant is None else f"{method}@{self.variant}"

    def _merge_settings(self, method: str) -> dict[str, Any]:
        """The part of the run config a merge method reads; nothing else keys its stage."""
        cfg, merge = self.config, self.config.merge
        if method == "average":
            return {}
        if method in TUNED_METHODS:
            settings: dict[str, Any] = {
                "lambdas": merge.lambdas,
                "lambda_grid": merge.lambda_grid,
                "validation_samples": merge.validation_samples,
            }
            if method in ("ties", "dare-ties"):
                settings["ties"] = _dump(merge.ties)
            if method.startswith("dare-"):
                settings["dare"] = _dump(merge.dare)
            return settings
        settings = {"align": _dump(merge.align), "calib_samples": cfg.calib_samples}
        if method == "expert":
            settings["init"] = merge.init
            if merge.init == "ta-grid":
                settings["lambda_grid"] = merge.lambda_grid
        else:
            settings["pp"] = _dump(merge.pp)
            settings["validation_samples"] = merge.validation_samples
        return settings

    def _merge_hash(self, method: str) -> str:
        self.experts()
        cfg = self.config
        payload = {
            "method": method,
            "settings": self._merge_settings(method),
            "experts": [self._hashes[f"expert:{t}"] for t in cfg.task_ids],
            "seed": cfg.seed,
        }
        if method == "expert-pp":
            payload["stage1"] = self._merge_hash("expert")
        return config_hash(payload)

    # merging

    def merge(self, method: str) -> ModelParams:
        label = f"merge:{self.merge_label(method)}"
        if label in self._models:
            return self._models[label]
        digest = self._merge_hash(method)
        builders = {
            "average": self._build_average,
            "expert": self._build_expert,
            "expert-pp": self._build_expert_pp,
        }
        if method in TUNED_METHODS:
            build = partial(self._build_tuned, method)
        elif method in builders:
            build = builders[method]
        else:
            raise ConfigError(f"Unknown merge method {method!r}")

        def build_and_save(directory: Path) -> None:
            merged = build(directory)
            save_params(merged.detach(), directory / MODEL_FILE, {"stage": label, "hash": digest})

        params = self.store.run(
            label, self._merge_dir(method), digest, build_and_save,
            lambda d: load_params(d / MODEL_FILE), replace=self.replace_merges,
        )
        self._hashes[label] = digest
        self._models[label] = params
        return params

    def _build_average(self, directory: Path) -> ModelParams:
        return merge_weight_average(self.base(), self.task_vectors())

    def _baseline(self, method: str, lam: list[float], tvs: list[TaskVector]) -> ModelParams:
        base, merge = self.base(), self.config.merge
        if method in ("dare-ta", "dare-ties"):
            dare = DareConfig(
                drop_prob=merge.dare.drop_prob,
                seed=derive_seed(self.config.seed, "dare", str(merge.dare.seed)),
            )
            tvs = [dare_preprocess(tv, dare) for tv in tvs]
        if method in ("ta", "dare-ta"):
            return merge_task_arithmetic(base, tvs, TAConfig(lambdas=lam))
        if len(set(lam)) != 1:
            raise ConfigError(f"{method} takes a single λ, got {lam}")
        ties = TiesConfig(keep_fraction=merge.ties.keep_fraction, scale=lam[0])
        return merge_ties(base, tvs, ties)

    def _build_tuned(self, method: str, directory: Path) -> ModelParams:
        """Fixed λ when configured, otherwise the grid value with the best validation average."""
        merge, k = self.config.merge, len(self.config.tasks)
        tvs = self.task_vectors()
        if merge.lambdas is not None:
            lam = merge.lambdas * k if len(merge.lambdas) == 1 else list(merge.lambdas)
            candidates = [lam]
        else:
            candidates = [[value] * k for value in merge.lambda_grid]

        table = Table(["lambda", "validation_avg", "chosen"])
        best: tuple[list[float], ModelParams] | None = None
        best_score, scores = -1.0, []
        for lam in candidates:
            merged = self._baseline(method, lam, tvs)
            score = float("nan")
            if len(candidates) > 1:
                score = evaluate(
                    merged, self.config.tasks, merge.validation_samples, self.validation_seed
                ).macro_average
            scores.append(score)
            if best is None or score > best_score:
                best, best_score = (lam, merged), score
        for lam, score in zip(candidates, scores):
            table.add(",".join(repr(v) for v in lam), score, lam == best[0])
        write_table(table, directory / "lambda_selection.csv", raw=True)
        logger.info("Lambda selected", method=method, lambdas=best[0], validation_avg=best_score)
        return best[1]

    def _targets(self) -> ExpertTargets:
        align = self.config.merge.align
        return ExpertTargets.build(
            self.experts(), self.calibration(), align.layers_for(self.config.model.n_blocks)
        )

    def _build_expert(self, directory: Path) -> ModelParams:
        merge, base = self.config.merge, self.base()
        tvs, experts, calib = self.task_vectors(), self.experts(), self.calibration()
        targets = self._targets()
        if merge.init == "ta-grid":
            init = ta_grid_init(base, tvs, experts, calib, merge.lambda_grid, merge.align, targets)
        else:
            init = prior_init(self.config.task_ids, base, merge.align.prior)
        coeffs, log = fit(base, tvs, experts, calib, merge.align, init, self.settings, targets)

        save_layer_coefficients(coeffs, directory / "coefficients.emck", {"init": merge.init})
        write_table(
            layer_coefficient_table(coeffs, self.config.model.n_blocks),
            directory / "coefficients.csv",
        )
        write_table(training_curve_table(log), directory / "training_curve.csv")
        _write_json(directory / "fit_summary.json", _fit_summary(log, init=merge.init))
        return apply_coefficients(base, tvs, coeffs)

    def stage1_coefficients(self):
        self.merge("expert")
        return load_layer_coefficients(self._merge_dir("expert") / "coefficients.emck")

    def _build_expert_pp(self, directory: Path) -> ModelParams:
        merge, base = self.config.merge, self.base()
        tvs, experts, calib = self.task_vectors(), self.experts(), self.calibration()
        stage1 = self.stage1_coefficients()
        stage1_summary = json.loads(
            (self._merge_dir("expert") / "fit_summary.json").read_text(encoding="utf-8")
        )
        stats = [unit_stats(tv) for tv in tvs]
        plan, report = plan_chunks(base, stage1, stats, merge.pp)
        coeffs, log = fit_pp(
            base, tvs, experts, calib, merge.align, stage1, merge.pp,
            stats=stats, plan=plan, settings=self.settings, targets=self._targets(),
        )
        merged = apply_chunk_coefficients(base, tvs, plan, coeffs)

        accuracy: dict[str, float | None] = {"stage1": None, "refined": None}
        if merge.pp.gate == "validation":
            for name, model in (("stage1", self.merge("expert")), ("refined", merged)):
                accuracy[name] = evaluate(
                    model, self.config.tasks, merge.validation_samples, self.validation_seed
                ).macro_average
        verdict = review_refinement(
            merge.pp.gate,
            log.final_align,
            stage1_summary["final_align"],
            accuracy["refined"],
            accuracy["stage1"],
        )
        kept_align = log.final_align
        if not verdict.kept:
            coeffs = init_chunk_coefficients(plan, stage1)
            merged = apply_chunk_coefficients(base, tvs, plan, coeffs)
            kept_align = stage1_summary["final_align"]
        logger.info(
            "Refinement reviewed",
            gate=merge.pp.gate,
            kept=verdict.kept,
            reason=verdict.reason,
            refined_align=log.final_align,
            stage1_align=stage1_summary["final_align"],
            refined_validation=accuracy["refined"],
            stage1_validation=accuracy["stage1"],
        )

        save_chunk_coefficients(coeffs, plan, directory / "chunk_coefficients.emck")
        save_importance(report, directory / "importance.emck")
        emit_importance_tables(report, directory / "importance")
        write_table(chunk_coefficient_table(coeffs, plan), directory / "chunk_coefficients.csv")
        write_table(training_curve_table(log), directory / "training_curve.csv")
        _write_json(
            directory / "fit_summary.json",
            _fit_summary(
                log,
                stage1_final_total=stage1_summary["final_total"],
                stage1_final_align=stage1_summary["final_align"],
                total_chunks=plan.total_chunks,
                frozen_units=len(plan.frozen_units),
                budget=plan.budget,
                gate=merge.pp.gate,
                refinement="kept" if verdict.kept else "reverted",
                refinement_reason=verdict.reason,
                kept_align=kept_align,
                validation_stage1=accuracy["stage1"],
                validation_refined=accuracy["refined"],
            ),
        )
        return merged

    # analysis

    def importance(self, raw: bool = False):
        """Importance tables from the stage-1 coefficients."""
        self.merge("expert")
        stage1_hash = self._hashes[f"merge:{self.merge_label('expert')}"]
        digest = config_hash({"stage1": stage1_hash, "raw": raw})
        name = "importance" if self.variant is None else f"importance@{self.variant}"

        def build(directory: Path) -> None:
            stats = [unit_stats(tv) for tv in self.task_vectors()]
            report = compute_importance(self.stage1_coefficients(), stats)
            save_importance(report, directory / "importance.emck")
            emit_importance_tables(report, directory, raw)

        return self.store.run(
            "analyze-importance", self.store.path(name), digest, build,
            lambda d: load_importance(d / "importance.emck"),
        )

    # evaluation and reporting

    def model(self, label: str) -> ModelParams:
        """Resolve ``base``, ``mixture``, ``expert:<task>`` or a merge method."""
        if label == "base":
            return self.base()
        if label == "mixture":
            return self.mixture()
        if label.startswith("expert:"):
            task_id = label.split(":", 1)[1]
            specs = [s for s in self.config.tasks if s.task_id == task_id]
            if not specs:
                raise ConfigError(f"Unknown task {task_id!r}")
            return self.expert(specs[0])
        method, _, variant = label.partition("@")
        if (variant or None) != self.variant:
            raise ConfigError(f"Model {label!r} belongs to another run variant")
        return self.merge(method)

    def _model_hash(self, label: str) -> str:
        self.model(label)
        trained = label in ("base", "mixture") or label.startswith("expert:")
        key = label if trained else f"merge:{label}"
        return self._hashes[key]

    def evaluate(self, label: str, task_ids: list[str] | None = None) -> EvalResult:
        """Test-split accuracy of a model, optionally on a subset of the tasks."""
        tasks = self.config.tasks
        if task_ids is not None:
            unknown = sorted(set(task_ids) - set(self.config.task_ids))
            if unknown or not task_ids:
                raise ConfigError(f"Unknown or empty task selection: {unknown or task_ids}")
            tasks = [t for t in tasks if t.task_id in task_ids]
        params = self.model(label)
        digest = config_hash(
            {
                "model": self._model_hash(label),
                "eval_samples": self.config.eval_samples,
                "tasks": [_dump(t) for t in tasks],
                "seed": self.config.seed,
            }
        )

        def build(directory: Path) -> None:
            result = evaluate(params, tasks, self.config.eval_samples, self.test_seed)
            write_text(directory / "result.json", result.model_dump_json(indent=2) + "\n")

        name = label.replace(":", "-")
        if len(tasks) != len(self.config.tasks):
            name += "[" + "+".join(t.task_id for t in tasks) + "]"
        return self.store.run(
            f"eval:{label}",
            self.store.path("eval", name),
            digest,
            build,
            lambda d: EvalResult.model_validate_json((d / "result.json").read_text("utf-8")),
        )

    def report(
        self, results: list[tuple[str, EvalResult]], name: str = "results", raw: bool = False
    ) -> list[Path]:
        directory = self.store.path("reports")
        write_text(directory / "run_config.yaml", self.config.to_yaml())
        paths = emit_results_table(results, directory, raw, name)
        meta = {
            "config_hash": config_hash(_dump(self.config)),
            "labels": [label for label, _ in results],
            "seed": self.config.seed,
            "versions": {"expert-merge": src.__version__, "torch": torch.__version__},
        }
        paths.append(_write_json(directory / f"{name}_meta.json", meta))
        return paths

    def labels(self) -> list[str]:
        labels = ["base", *[f"expert:{t}" for t in self.config.task_ids]]
        if self.config.include_mixture:
            labels.append("mixture")
        return labels + [self.merge_label(m) for m in self.config.methods]

    def variant_pipeline(self, variant: str, overrides: dict[str, Any]) -> "Pipeline":
        return Pipeline(
            self.config.with_overrides(overrides),
            self.settings,
            variant=variant,
            replace_merges=self.replace_merges,
        )

    def collect(self, raw: bool = False) -> list[tuple[str, EvalResult]]:
        """Every stage the config asks for; returns the labelled test results."""
        self.gen_tasks()
        results = [(label, self.evaluate(label)) for label in self.labels()]
        if "expert" in self.config.methods or "expert-pp" in self.config.methods:
            self.importance(raw)
        for ablation in self.config.ablations:
            method, overrides = ABLATIONS[ablation]
            variant = self.variant_pipeline(ablation, {"merge": overrides})
            label = variant.merge_label(method)
            results.append((label, variant.evaluate(label)))
        return results

    def run(self, raw: bool = False) -> list[Path]:
        """Every stage the config asks for, then the combined results table."""
        results = self.collect(raw)
        artifacts: list[Path] = []
        if "expert" in self.config.methods or "expert-pp" in self.config.methods:
            artifacts.append(self.store.path("importance"))
        artifacts += self.report(results, raw=raw)
        return artifacts

    def seed_sweep(self, seeds: list[int], raw: bool = False) -> list[Path]:
        """
        The whole run once per root seed, then macro averages by seed with a mean row.

        Each seed gets its own run directory under ``seeds/``; the aggregate
        lands in ``reports/sweep_seed.{csv,txt}``.
        """
        if len(set(seeds)) != len(seeds):
            raise ConfigError(f"Seeds must be distinct, got {seeds}")
        per_seed = []
        for seed in seeds:
            overrides = {"seed": seed, "output_dir": str(self.root / "seeds" / f"seed={seed}")}
            pipeline = Pipeline(
                self.config.with_overrides(overrides),
                self.settings,
                replace_merges=self.replace_merges,
            )
            results = pipeline.collect(raw)
            pipeline.report(results, raw=raw)
            per_seed.append((seed, results))
            logger.info("Seed finished", seed=seed, models=len(results))

        directory = self.store.path("reports")
        paths = emit_seed_table(per_seed, directory, raw)
        meta = {
            "config_hash": config_hash(_dump(self.config)),
            "seeds": list(seeds),
            "versions": {"expert-merge": src.__version__, "torch": torch.__version__},
        }
        paths.append(_write_json(directory / "sweep_seed_meta.json", meta))
        return paths

    def sweep(self, axis: str, values: list[float], method: str, raw: bool = False) -> list[Path]:
        """One merge + evaluation per value of γ or calibration-sample count, or a run per seed."""
        if axis not in SWEEP_AXES:
            raise ConfigError(f"Unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
        if not values:
            raise ConfigError("Sweep needs at least one value")
        if axis == "seed":
            if any(value != int(value) for value in values):
                raise ConfigError(f"Seeds must be integers, got {values}")
            return self.seed_sweep([int(value) for value in values], raw)
        results = []
        for value in values:
            if axis == "gamma":
                overrides: dict[str, Any] = {"merge": {"align": {"gamma": value}}}
                tag = f"gamma={value:g}"
            else:
                if value != int(value) or value < 1:
                    raise ConfigError(f"Sample counts must be positive integers, got {value}")
                overrides = {"calib_samples": int(value)}
                tag = f"samples={int(value)}"
            variant = self.variant_pipeline(tag, overrides)
            label = variant.merge_label(method)
            results.append((label, variant.evaluate(label)))
        return self.report(results, name=f"sweep_{axis}", raw=raw)


def run_pipeline(
    config: RunConfig, settings: Settings | None = None, raw: bool = False
) -> PipelineResult:
    """Run every configured stage; failures become a nonzero status and one error line."""
    try:
        artifacts = Pipeline(config, settings).run(raw=raw)
    except ExpertMergeError as exc:
        return PipelineResult(status=1, error=exc.one_line(exc.stage))
    logger.info("Pipeline finished", output_dir=str(config.output_dir), artifacts=len(artifacts))
    return PipelineResult(status=0, artifacts=artifacts)
