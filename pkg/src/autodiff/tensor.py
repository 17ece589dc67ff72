"""Dense float64 tensor helpers on top of torch."""

from collections.abc import Sequence

import torch

from src.exceptions import NumericError

DTYPE = torch.float64


def as_tensor(
    data: Sequence[float] | torch.Tensor, shape: Sequence[int] | None = None
) -> torch.Tensor:
    """Build a contiguous float64 tensor, optionally reshaped to ``shape``."""
    tensor = torch.as_tensor(data, dtype=DTYPE)
    if shape is not None:
        expected = 1
        for extent in shape:
            if extent < 0:
                raise NumericError("Negative extent", shape=list(shape))
            expected *= extent
        if tensor.numel() != expected:
            raise NumericError(
                f"Data length {tensor.numel()} does not match shape {list(shape)}"
            )
        tensor = tensor.reshape(tuple(shape))
    return tensor.contiguous()


def check_finite(tensor: torch.Tensor, what: str) -> torch.Tensor:
    """Raise NumericError if ``tensor`` holds NaN or Inf."""
    if not bool(torch.isfinite(tensor).all()):
        raise NumericError(f"Non-finite values in {what}", term=what)
    return tensor


def require_same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise NumericError(
            f"Shape mismatch in {what}: {list(a.shape)} vs {list(b.shape)}", term=what
        )


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Matrix product of two 2-D tensors; gradients flow through either argument."""
    if a.dim() != 2 or b.dim() != 2:
        raise NumericError(f"matmul expects 2-D operands, got {a.dim()}-D and {b.dim()}-D")
    if a.shape[1] != b.shape[0]:
        raise NumericError(
            f"matmul inner extents disagree: {list(a.shape)} x {list(b.shape)}", term="matmul"
        )
    return check_finite(a @ b, "matmul")


def softmax(logits: torch.Tensor, temperature: float = 1.0) -> torch.Tensor:
    """Softmax over the last axis of ``logits / temperature``."""
    if temperature <= 0:
        raise NumericError(f"Temperature must be positive, got {temperature}")
    return check_finite(torch.softmax(logits / temperature, dim=-1), "softmax")
