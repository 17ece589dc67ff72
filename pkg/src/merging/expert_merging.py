"""Layer-wise coefficient learning by hidden-state and logit alignment."""

from collections.abc import Sequence

import structlog
import torch

from src.autodiff import DifferentiableScalar
from src.config import Settings
from src.exceptions import ConfigError, SchemaMismatchError
from src.merging.alignment import AlignConfig, ExpertTargets, TrainLog, alignment_terms
from src.merging.coefficients import LayerCoefficients
from src.merging.task_vectors import TaskVector, combine_unit, require_aligned
from src.merging.trainer import CoefficientTrainer
from src.model import ModelParams
from src.tasks.calibration import CalibrationSet

logger = structlog.get_logger(__name__)


def apply_coefficients(
    base: ModelParams, task_vectors: list[TaskVector], coeffs: LayerCoefficients
) -> ModelParams:
    """θ_base^ℓ + Σ_k α[k][ℓ]·τ_k^ℓ for every unit ℓ."""
    vectors = require_aligned(base, task_vectors)
    if coeffs.num_experts != len(vectors):
        raise SchemaMismatchError(
            f"{coeffs.num_experts} coefficient rows for {len(vectors)} task vectors"
        )
    if coeffs.units != base.units:
        raise SchemaMismatchError("Coefficient units do not match the base schema")
    merged = {}
    for j, unit in enumerate(base.units):
        merged[unit] = combine_unit(
            base[unit], [(coeffs.alpha[k, j], tv[unit]) for k, tv in enumerate(vectors)]
        )
    return ModelParams(base.config, merged)


def layer_regularizer(alpha: torch.Tensor, prior: torch.Tensor) -> torch.Tensor:
    """R(α) = (1/(K·L)) Σ_k Σ_ℓ |α_k^ℓ − ᾱ_k|."""
    return (alpha - prior.unsqueeze(1)).abs().mean()


def _targets_for(
    experts: list[ModelParams], calib: CalibrationSet, cfg: AlignConfig, base: ModelParams
) -> ExpertTargets:
    if not calib.task_ids:
        raise ConfigError("Calibration set is empty")
    return ExpertTargets.build(experts, calib, cfg.layers_for(base.config.n_blocks))


def alignment_loss(
    coeffs: LayerCoefficients,
    base: ModelParams,
    task_vectors: list[TaskVector],
    experts: list[ModelParams],
    calib: CalibrationSet,
    cfg: AlignConfig,
    targets: ExpertTargets | None = None,
) -> DifferentiableScalar:
    """
    The full objective Σ_k β_k (L_hid + L_logit) + γ·R(α), differentiable w.r.t. α only.

    ``coeffs.alpha`` is used as the leaf when it already requires grad;
    otherwise a fresh leaf copy is registered under the name ``alpha``.
    """
    if len(experts) != len(task_vectors):
        raise SchemaMismatchError(f"{len(experts)} experts for {len(task_vectors)} task vectors")
    alpha = coeffs.alpha
    if not alpha.requires_grad:
        alpha = alpha.detach().clone().requires_grad_(True)
    targets = targets or _targets_for(experts, calib, cfg, base)
    live = LayerCoefficients(coeffs.expert_ids, coeffs.units, alpha, coeffs.prior)
    merged = apply_coefficients(base, task_vectors, live)
    terms = alignment_terms(merged, targets, cfg, layer_regularizer(alpha, coeffs.prior))
    leaves = {"alpha": alpha} if alpha.is_leaf else {}
    return DifferentiableScalar(terms.total, leaves)


def fit(
    base: ModelParams,
    task_vectors: list[TaskVector],
    experts: list[ModelParams],
    calib: CalibrationSet,
    cfg: AlignConfig,
    init: LayerCoefficients,
    settings: Settings | None = None,
    targets: ExpertTargets | None = None,
) -> tuple[LayerCoefficients, TrainLog]:
    """Adam minimization of the alignment objective from ``init``."""
    if len(experts) != len(task_vectors):
        raise SchemaMismatchError(f"{len(experts)} experts for {len(task_vectors)} task vectors")
    targets = targets or _targets_for(experts, calib, cfg, base)
    alpha = init.alpha.detach().clone().requires_grad_(True)
    prior = init.prior.detach().clone()

    def evaluate():
        live = LayerCoefficients(init.expert_ids, init.units, alpha, prior)
        merged = apply_coefficients(base, task_vectors, live)
        return alignment_terms(merged, targets, cfg, layer_regularizer(alpha, prior))

    log = CoefficientTrainer(cfg, settings).optimize(
        [alpha],
        evaluate,
        task_ids=targets.task_ids,
        snapshot=lambda: alpha.detach().clone(),
        label="expert-merging",
    )
    result = LayerCoefficients(
        list(init.expert_ids), list(init.units), alpha.detach().clone(), prior
    )
    return result, log


def prior_init(
    expert_ids: Sequence[str], base: ModelParams, prior: float
) -> LayerCoefficients:
    """Constant coefficients at the prior ᾱ for every expert and unit."""
    return LayerCoefficients.constant(expert_ids, base.units, [prior] * len(expert_ids))


def ta_grid_init(
    base: ModelParams,
    task_vectors: list[TaskVector],
    experts: list[ModelParams],
    calib: CalibrationSet,
    grid: Sequence[float],
    cfg: AlignConfig | None = None,
    targets: ExpertTargets | None = None,
) -> LayerCoefficients:
    """Pick the uniform λ with the lowest alignment loss (no γ term); ᾱ_k := λ."""
    if not grid:
        raise ConfigError("Task Arithmetic grid is empty")
    cfg = cfg or AlignConfig()
    targets = targets or _targets_for(experts, calib, cfg, base)
    expert_ids = [tv.expert_id for tv in task_vectors]
    zero = torch.zeros((), dtype=torch.float64)

    losses = []
    with torch.no_grad():
        for lam in grid:
            coeffs = LayerCoefficients.constant(expert_ids, base.units, [lam] * len(expert_ids))
            merged = apply_coefficients(base, task_vectors, coeffs)
            losses.append(float(alignment_terms(merged, targets, cfg, zero).align))
    best = min(range(len(grid)), key=lambda i: (losses[i], i))
    logger.info(
        "Task Arithmetic initialization selected",
        grid=list(grid),
        losses=losses,
        chosen=grid[best],
    )
    return LayerCoefficients.constant(expert_ids, base.units, [grid[best]] * len(expert_ids))
