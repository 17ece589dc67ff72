"""Finite-difference verification of analytic gradients."""

from collections.abc import Callable, Mapping

import structlog
import torch

from src.autodiff.scalar import DifferentiableScalar
from src.autodiff.tensor import DTYPE
from src.exceptions import NumericError

logger = structlog.get_logger(__name__)

Objective = Callable[[Mapping[str, torch.Tensor]], DifferentiableScalar | torch.Tensor]


def _evaluate(f: Objective, leaves: Mapping[str, torch.Tensor]) -> DifferentiableScalar:
    result = f(leaves)
    if isinstance(result, DifferentiableScalar):
        return result.register(**leaves)
    return DifferentiableScalar(result, leaves)


def grad_check(
    f: Objective,
    point: Mapping[str, torch.Tensor],
    epsilon: float = 1e-4,
    scale_floor: float = 1e-3,
) -> float:
    """
    Compare analytic gradients of ``f`` with central finite differences.

    Each element's error is ``|g − ĝ| / max(|g|, |ĝ|, scale_floor)``. Where
    both gradients are below ``scale_floor`` this is an absolute error
    scaled by ``1/scale_floor``: with the default floor a returned 1e−5
    bounds the absolute error of small gradients by 1e−8, not their
    relative error. Pass a smaller floor to check tiny gradients
    relatively; the finite-difference truncation error (about ε²) then
    sets the achievable accuracy.

    Args:
        f: Maps named leaf tensors to a scalar objective
        point: Leaf values at which to compare
        epsilon: Perturbation size
        scale_floor: Lower bound of the error denominator

    Returns:
        Worst scaled error over all leaf elements
    """
    leaves = {
        name: value.detach().clone().to(DTYPE).requires_grad_(True)
        for name, value in point.items()
    }
    analytic = _evaluate(f, leaves).gradients()

    worst = 0.0
    with torch.no_grad():
        for name, base in point.items():
            flat = base.detach().clone().to(DTYPE).reshape(-1)
            for index in range(flat.numel()):
                values = []
                for sign in (1.0, -1.0):
                    shifted = flat.clone()
                    shifted[index] += sign * epsilon
                    perturbed = {k: v.detach().clone().to(DTYPE) for k, v in point.items()}
                    perturbed[name] = shifted.reshape(base.shape)
                    value = _evaluate(f, perturbed).tensor
                    if not bool(torch.isfinite(value)):
                        raise NumericError(
                            "Objective not finite at perturbed point", term=name, index=index
                        )
                    values.append(float(value))
                numeric = (values[0] - values[1]) / (2.0 * epsilon)
                exact = float(analytic[name].reshape(-1)[index])
                denom = max(abs(exact), abs(numeric), scale_floor)
                worst = max(worst, abs(exact - numeric) / denom)

    logger.debug("Gradient check finished", leaves=sorted(point), max_rel_error=worst)
    return worst
