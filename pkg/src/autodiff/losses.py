"""Alignment losses: temperature-scaled KL on logits and squared L2 on hidden states."""

import torch

from src.autodiff.scalar import DifferentiableScalar, leaf_entries
from src.autodiff.tensor import check_finite, require_same_shape
from src.exceptions import NumericError


def softmax_kl(
    target_logits: torch.Tensor,
    model_logits: torch.Tensor,
    temperature: float = 1.0,
) -> DifferentiableScalar:
    """
    T² · KL(softmax(target/T) ‖ softmax(model/T)), averaged over all non-vocab positions.

    The vocabulary axis is the last one. The target side is detached, so
    gradients flow only through ``model_logits``.
    """
    if temperature <= 0:
        raise NumericError(f"Temperature must be positive, got {temperature}", term="logit")
    require_same_shape(target_logits, model_logits, "softmax_kl")
    target_log_probs = torch.log_softmax(target_logits.detach() / temperature, dim=-1)
    model_log_probs = torch.log_softmax(model_logits / temperature, dim=-1)
    per_position = (target_log_probs.exp() * (target_log_probs - model_log_probs)).sum(dim=-1)
    value = per_position.mean() * (temperature * temperature)
    check_finite(value, "logit loss")
    return DifferentiableScalar(value, leaf_entries(model_logits=model_logits))


def sq_l2_distance(a: torch.Tensor, b: torch.Tensor) -> DifferentiableScalar:
    """Squared Euclidean distance over the last axis, averaged over the remaining positions."""
    require_same_shape(a, b, "sq_l2_distance")
    diff = a - b.detach()
    value = (diff * diff).sum(dim=-1).mean()
    check_finite(value, "hidden loss")
    return DifferentiableScalar(value, leaf_entries(a=a))
