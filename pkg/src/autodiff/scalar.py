"""Scalar objective values that carry their registered leaves."""

from collections.abc import Mapping

import torch

from src.autodiff.tensor import check_finite


class DifferentiableScalar:
    """
    A 0-d float64 value together with the leaf tensors it is differentiated against.

    Gradients are computed with ``retain_graph=True`` so calling ``gradients()``
    repeatedly yields identical results.
    """

    def __init__(self, value: torch.Tensor, leaves: Mapping[str, torch.Tensor] | None = None):
        if value.dim() != 0:
            value = value.reshape(())
        self._value = check_finite(value, "objective")
        self._leaves: dict[str, torch.Tensor] = dict(leaves or {})

    @property
    def tensor(self) -> torch.Tensor:
        return self._value

    @property
    def value(self) -> float:
        return float(self._value.detach())

    @property
    def leaves(self) -> dict[str, torch.Tensor]:
        return dict(self._leaves)

    def register(self, **leaves: torch.Tensor) -> "DifferentiableScalar":
        """Return a copy with additional leaves registered."""
        return DifferentiableScalar(self._value, {**self._leaves, **leaves})

    def gradients(self) -> dict[str, torch.Tensor]:
        """Gradient for every registered leaf, and nothing else."""
        if not self._leaves:
            return {}
        names = list(self._leaves)
        tensors = [self._leaves[name] for name in names]
        if not self._value.requires_grad:
            return {name: torch.zeros_like(t) for name, t in zip(names, tensors)}
        grads = torch.autograd.grad(
            self._value, tensors, retain_graph=True, allow_unused=True
        )
        result = {}
        for name, tensor, grad in zip(names, tensors, grads):
            grad = torch.zeros_like(tensor) if grad is None else grad.detach()
            result[name] = check_finite(grad, f"gradient of {name}")
        return result

    def gradient(self, name: str) -> torch.Tensor:
        return self.gradients()[name]

    def __add__(self, other: "DifferentiableScalar | float") -> "DifferentiableScalar":
        if isinstance(other, DifferentiableScalar):
            leaves = {**self._leaves, **other._leaves}
            return DifferentiableScalar(self._value + other._value, leaves)
        return DifferentiableScalar(self._value + other, self._leaves)

    __radd__ = __add__

    def __mul__(self, factor: float) -> "DifferentiableScalar":
        return DifferentiableScalar(self._value * factor, self._leaves)

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"DifferentiableScalar(value={self.value!r}, leaves={sorted(self._leaves)})"


def leaf_entries(**tensors: torch.Tensor) -> dict[str, torch.Tensor]:
    """Keep only tensors that are autograd leaves requiring grad."""
    return {name: t for name, t in tensors.items() if t.requires_grad and t.is_leaf}
