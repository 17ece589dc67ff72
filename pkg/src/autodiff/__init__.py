"""Float64 tensors, alignment losses and reverse-mode gradients w.r.t. merge coefficients."""

from src.autodiff.gradcheck import grad_check
from src.autodiff.losses import softmax_kl, sq_l2_distance
from src.autodiff.scalar import DifferentiableScalar
from src.autodiff.tensor import DTYPE, as_tensor, check_finite, matmul, softmax

__all__ = [
    "DTYPE",
    "DifferentiableScalar",
    "as_tensor",
    "check_finite",
    "grad_check",
    "matmul",
    "softmax",
    "softmax_kl",
    "sq_l2_distance",
]
