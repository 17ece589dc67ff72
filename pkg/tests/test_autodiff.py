"""Tests for float64 tensor helpers, alignment losses and gradient checking."""

import math

import pytest
import torch

from src.autodiff import (
    DifferentiableScalar,
    as_tensor,
    grad_check,
    matmul,
    softmax_kl,
    sq_l2_distance,
)
from src.exceptions import NumericError
from src.merging import AlignConfig, ExpertTargets, LayerCoefficients, alignment_loss


def test_matmul_identity_and_scalar():
    """Test the identity and 1x1 products."""
    b = as_tensor([1, 2, 3, 4, 5, 6], shape=(2, 3))
    assert torch.equal(matmul(torch.eye(2, dtype=torch.float64), b), b)
    assert float(matmul(as_tensor([[2.0]]), as_tensor([[3.0]]))[0, 0]) == 6.0


def test_matmul_matches_triple_loop():
    """Test matmul against a naive triple loop."""
    generator = torch.Generator().manual_seed(0)
    a = torch.round(torch.randn(3, 4, generator=generator, dtype=torch.float64) * 64) / 64
    b = torch.round(torch.randn(4, 2, generator=generator, dtype=torch.float64) * 64) / 64
    expected = torch.zeros(3, 2, dtype=torch.float64)
    for i in range(3):
        for j in range(2):
            for k in range(4):
                expected[i, j] += a[i, k] * b[k, j]
    assert torch.equal(matmul(a, b), expected)


def test_matmul_rejects_bad_shapes():
    """Test inner-extent mismatches raise a numeric error."""
    with pytest.raises(NumericError):
        matmul(torch.ones(2, 3, dtype=torch.float64), torch.ones(2, 3, dtype=torch.float64))


def test_as_tensor_shape_mismatch():
    """Test data length must match the requested shape."""
    with pytest.raises(NumericError):
        as_tensor([1.0, 2.0, 3.0], shape=(2, 2))


def test_softmax_kl_identical_is_zero():
    """Test KL of identical distributions is zero at any temperature."""
    logits = torch.tensor([[0.3, -1.2, 2.0]], dtype=torch.float64)
    for temperature in (0.5, 1.0, 3.0):
        value = softmax_kl(logits, logits.clone(), temperature).value
        assert value == pytest.approx(0.0, abs=1e-15)


def test_softmax_kl_hand_value():
    """Test KL(uniform || (2/3, 1/3)) evaluated by hand."""
    target = torch.tensor([0.0, 0.0], dtype=torch.float64)
    model = torch.tensor([math.log(2.0), 0.0], dtype=torch.float64)
    expected = 0.5 * math.log(0.75) + 0.5 * math.log(1.5)
    assert softmax_kl(target, model, 1.0).value == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(0.05889, abs=1e-5)


def test_softmax_kl_temperature_prefactor():
    """Test T=2 equals four times the KL of the halved logits at T=1."""
    generator = torch.Generator().manual_seed(3)
    target = torch.randn(4, 5, generator=generator, dtype=torch.float64)
    model = torch.randn(4, 5, generator=generator, dtype=torch.float64)
    scaled = softmax_kl(target, model, 2.0).value
    assert scaled == pytest.approx(4.0 * softmax_kl(target / 2, model / 2, 1.0).value, rel=1e-12)


def test_softmax_kl_rejects_nonpositive_temperature():
    """Test a zero temperature is refused."""
    logits = torch.zeros(3, dtype=torch.float64)
    with pytest.raises(NumericError):
        softmax_kl(logits, logits, 0.0)


def test_sq_l2_distance_cases():
    """Test coincident points, the unit offset and a brute-force oracle."""
    a = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
    assert sq_l2_distance(a, a.clone()).value == 0.0
    assert sq_l2_distance(a, torch.zeros_like(a)).value == 1.0

    generator = torch.Generator().manual_seed(5)
    x = torch.randn(3, 4, generator=generator, dtype=torch.float64)
    y = torch.randn(3, 4, generator=generator, dtype=torch.float64)
    total = 0.0
    for i in range(3):
        for j in range(4):
            total += (float(x[i, j]) - float(y[i, j])) ** 2
    assert sq_l2_distance(x, y).value == pytest.approx(total / 3, rel=1e-12)


def test_scalar_gradients_only_for_registered_leaves():
    """Test gradients cover exactly the registered leaves and are repeatable."""
    alpha = torch.tensor([1.0, 2.0], dtype=torch.float64, requires_grad=True)
    other = torch.tensor(3.0, dtype=torch.float64, requires_grad=True)
    scalar = DifferentiableScalar((alpha * alpha).sum() * other, {"alpha": alpha})
    first = scalar.gradients()
    assert set(first) == {"alpha"}
    assert torch.equal(first["alpha"], torch.tensor([6.0, 12.0], dtype=torch.float64))
    assert torch.equal(scalar.gradients()["alpha"], first["alpha"])


def test_scalar_rejects_non_finite_value():
    """Test a NaN objective is refused at construction."""
    with pytest.raises(NumericError):
        DifferentiableScalar(torch.tensor(float("nan"), dtype=torch.float64))


def test_grad_check_quadratic():
    """Test f(a) = a^2 at a = 3."""
    leaves = {"a": torch.tensor(3.0, dtype=torch.float64)}
    error = grad_check(lambda values: values["a"] ** 2, leaves)
    assert error <= 1e-9


def test_grad_check_constant():
    """Test a constant objective has zero analytic and numeric gradients."""
    error = grad_check(
        lambda leaves: torch.tensor(5.0, dtype=torch.float64),
        {"a": torch.tensor([1.0, -2.0], dtype=torch.float64)},
    )
    assert error == 0.0


def test_grad_check_floor_scales_small_gradients():
    """Test a wrong gradient below the floor is scored absolutely, and relatively without it."""

    def halved(values):
        a = values["a"]
        # value 1e-6·a², analytic gradient 1e-6 instead of 2e-6·a
        return 1e-6 * a.detach() ** 2 + 1e-6 * (a - a.detach())

    point = {"a": torch.tensor(1.0, dtype=torch.float64)}
    assert grad_check(halved, point) == pytest.approx(1e-3, rel=1e-4)
    assert grad_check(halved, point, scale_floor=1e-12) == pytest.approx(0.5, rel=1e-4)


def test_grad_check_full_alignment_loss(base, experts, task_vectors, calib):
    """Test the alignment loss gradient against finite differences on a 2-block model."""
    cfg = AlignConfig(gamma=0.5, temperature=1.5, hidden_layers=[0, 1])
    targets = ExpertTargets.build(experts, calib, cfg.layers_for(base.config.n_blocks))
    expert_ids = [tv.expert_id for tv in task_vectors]
    prior = torch.tensor([0.3, 0.3], dtype=torch.float64)
    generator = torch.Generator().manual_seed(11)
    point = 0.5 + 0.5 * torch.rand(2, len(base.units), generator=generator, dtype=torch.float64)

    def objective(leaves):
        coeffs = LayerCoefficients(expert_ids, base.units, leaves["alpha"], prior)
        return alignment_loss(coeffs, base, task_vectors, experts, calib, cfg, targets)

    assert grad_check(objective, {"alpha": point}) <= 1e-5
