"""Tests for task vectors and the training-free merging baselines."""

import math

import pytest
import torch

from src.exceptions import ConfigError, DegenerateInputError, SchemaMismatchError
from src.merging import (
    DareConfig,
    TAConfig,
    TaskVector,
    TiesConfig,
    add_deltas,
    compute_task_vector,
    dare_preprocess,
    merge_task_arithmetic,
    merge_ties,
    merge_weight_average,
    ties_unit,
    unit_stats,
)
from src.model import ModelConfig, ModelParams, UnitId, UnitKind, forward
from tests.conftest import dyadic, perturb


def _toy_vector(values: dict[UnitId, list[float]], config: ModelConfig) -> TaskVector:
    deltas = {u: torch.tensor(v, dtype=torch.float64) for u, v in values.items()}
    return TaskVector("toy", config, deltas, base_fingerprint="-", expert_fingerprint="-")


def test_task_vector_of_self_is_zero(base):
    """Test expert = base gives an all-zero vector."""
    assert compute_task_vector(base, base).is_zero()


def test_task_vector_reconstructs_expert(base, experts):
    """Test base + tau reconstructs the expert exactly."""
    tv = compute_task_vector(base, experts[0])
    assert add_deltas(base, tv.deltas).bitwise_equal(experts[0])
    for unit in base.units:
        assert torch.equal(tv[unit], experts[0][unit] - base[unit])


def test_task_vector_schema_mismatch(base):
    """Test experts with another config are refused."""
    other = ModelConfig(d_model=8, n_heads=2, n_blocks=3, d_mlp=16, max_seq_len=10)
    with pytest.raises(SchemaMismatchError):
        compute_task_vector(base, ModelParams.zeros(other))


def test_task_vector_is_linear(base, task_vectors):
    """Test tau of base + a*tau1 + b*tau2 is a*tau1 + b*tau2."""
    tau1, tau2 = task_vectors
    a, b = 0.75, -1.5
    mixed = base.map(lambda unit, t: t + a * tau1[unit] + b * tau2[unit])
    tv = compute_task_vector(base, mixed, "mixed")
    for unit in base.units:
        assert torch.allclose(tv[unit], a * tau1[unit] + b * tau2[unit], rtol=0, atol=1e-12)


def test_unit_stats_are_scale_invariant(task_vectors):
    """Test scaling a task vector scales s_raw by |c| and leaves the shares s unchanged."""
    tv = task_vectors[0]
    reference = unit_stats(tv)
    for factor in (3.0, -0.25):
        scaled = unit_stats(tv.scaled(factor))
        assert torch.allclose(scaled.s, reference.s, rtol=1e-12, atol=0)
        assert torch.allclose(scaled.s_raw, abs(factor) * reference.s_raw, rtol=1e-12, atol=0)
        assert torch.equal(scaled.n, reference.n)


def test_unit_stats_direct_normalization(tiny_config):
    """Test mean magnitudes 3 and 1 normalize to 0.75 and 0.25."""
    tv = _toy_vector(
        {UnitId(None, UnitKind.FINAL_NORM): [3.0, -3.0], UnitId(0, UnitKind.NORM1): [1.0, -1.0]},
        tiny_config,
    )
    stats = unit_stats(tv)
    assert stats.s.tolist() == [0.75, 0.25]
    assert stats.n.tolist() == [2, 2]


def test_unit_stats_uniform_and_oracle(base, task_vectors):
    """Test uniform magnitudes give 1/#units and random vectors match a brute-force loop."""
    ones = {u: torch.ones_like(t) for u, t in task_vectors[0].deltas.items()}
    uniform = task_vectors[0].with_deltas(ones)
    stats = unit_stats(uniform)
    assert torch.allclose(stats.s, torch.full_like(stats.s, 1.0 / len(base.units)), rtol=1e-12)

    tv = task_vectors[1]
    means = [sum(abs(x) for x in tv[u].reshape(-1).tolist()) / tv[u].numel() for u in tv.units]
    total = sum(means)
    for got, mean in zip(unit_stats(tv).s.tolist(), means):
        assert got == pytest.approx(mean / total, rel=1e-12)


def test_unit_stats_all_zero_is_degenerate(base):
    """Test the all-zero vector raises a degenerate-input error."""
    with pytest.raises(DegenerateInputError):
        unit_stats(compute_task_vector(base, base))


def test_weight_average_single_expert(base, experts, task_vectors):
    """Test averaging one expert returns it exactly."""
    assert merge_weight_average(base, task_vectors[:1]).bitwise_equal(experts[0])


def test_weight_average_opposite_vectors_cancel(base, task_vectors):
    """Test tau and -tau average back to the base."""
    tv = task_vectors[0]
    assert merge_weight_average(base, [tv, tv.scaled(-1.0)]).bitwise_equal(base)


def test_weight_average_three_experts_oracle(base):
    """Test K=3 against an elementwise accumulation."""
    vectors = [compute_task_vector(base, perturb(base, seed), f"e{seed}") for seed in (3, 4, 5)]
    merged = merge_weight_average(base, vectors)
    for unit in base.units:
        flat = base[unit].reshape(-1).tolist()
        for tv in vectors:
            flat = [x + (1.0 / 3.0) * d for x, d in zip(flat, tv[unit].reshape(-1).tolist())]
        assert merged[unit].reshape(-1).tolist() == flat


def test_task_arithmetic_identities(base, experts, task_vectors):
    """Test zero scales, the single-expert identity and the reduction to averaging."""
    zero = merge_task_arithmetic(base, task_vectors, TAConfig(lambdas=[0.0, 0.0]))
    tokens = [0, 1, 6, 4, 9, 5]
    assert torch.equal(forward(zero, tokens).logits, forward(base, tokens).logits)

    one = merge_task_arithmetic(base, task_vectors[:1], TAConfig(lambdas=[1.0]))
    assert one.bitwise_equal(experts[0])

    half = merge_task_arithmetic(base, task_vectors, TAConfig(lambdas=[0.5, 0.5]))
    assert half.bitwise_equal(merge_weight_average(base, task_vectors))


def test_task_arithmetic_validates_lambdas(base, task_vectors):
    """Test wrong counts and non-finite scales raise config errors."""
    with pytest.raises(ConfigError):
        merge_task_arithmetic(base, task_vectors, TAConfig(lambdas=[1.0]))
    with pytest.raises(ConfigError):
        merge_task_arithmetic(base, task_vectors, TAConfig(lambdas=[1.0, math.inf]))


def test_task_arithmetic_is_linear(base, task_vectors):
    """Test lambda*tau1 + mu*tau2 merges to the sum of the two one-sided merges."""
    lam, mu = 0.375, -0.625
    both = merge_task_arithmetic(base, task_vectors, TAConfig(lambdas=[lam, mu]))
    left = merge_task_arithmetic(base, task_vectors, TAConfig(lambdas=[lam, 0.0]))
    right = merge_task_arithmetic(base, task_vectors, TAConfig(lambdas=[0.0, mu]))
    for unit in base.units:
        expected = base[unit] + (left[unit] - base[unit]) + (right[unit] - base[unit])
        assert torch.allclose(both[unit], expected, rtol=0, atol=1e-12)

    doubled = [tv.scaled(2.0) for tv in task_vectors]
    halved = merge_task_arithmetic(base, doubled, TAConfig(lambdas=[lam / 2, mu / 2]))
    assert halved.bitwise_equal(both)


def test_dare_without_drops_is_identity(task_vectors):
    """Test p = 0 leaves the vector unchanged."""
    tv = task_vectors[0]
    out = dare_preprocess(tv, DareConfig(drop_prob=0.0, seed=9))
    assert all(torch.equal(out[u], tv[u]) for u in tv.units)


def test_dare_is_seeded(task_vectors):
    """Test a fixed seed reproduces the same drops."""
    tv = task_vectors[1]
    a = dare_preprocess(tv, DareConfig(drop_prob=0.5, seed=3))
    b = dare_preprocess(tv, DareConfig(drop_prob=0.5, seed=3))
    c = dare_preprocess(tv, DareConfig(drop_prob=0.5, seed=4))
    assert all(torch.equal(a[u], b[u]) for u in tv.units)
    assert any(not torch.equal(a[u], c[u]) for u in tv.units)


def test_dare_rescale_preserves_expectation(tiny_config):
    """Test the mean over many seeds stays within 5% of the original entries."""
    unit = UnitId(None, UnitKind.FINAL_NORM)
    generator = torch.Generator().manual_seed(0)
    values = torch.randn(8, generator=generator, dtype=torch.float64) + 2.0
    tv = _toy_vector({unit: values.tolist()}, tiny_config)
    total = torch.zeros(8, dtype=torch.float64)
    runs = 10000
    for seed in range(runs):
        total += dare_preprocess(tv, DareConfig(drop_prob=0.5, seed=seed))[unit]
    mean = total / runs
    keep = values.abs() > 1e-6
    assert bool(((mean[keep] - values[keep]).abs() <= 0.05 * values[keep].abs()).all())


def test_dare_keeps_exact_zeros(tiny_config):
    """Test entries that are exactly zero stay zero whatever the drop pattern."""
    unit = UnitId(None, UnitKind.FINAL_NORM)
    values = [0.0, 1.5, 0.0, -2.0, 0.0, 0.25, 0.0, -0.5]
    tv = _toy_vector({unit: values}, tiny_config)
    zeros = torch.tensor(values, dtype=torch.float64) == 0.0
    for seed in range(200):
        for p in (0.1, 0.5, 0.9):
            out = dare_preprocess(tv, DareConfig(drop_prob=p, seed=seed))[unit]
            assert bool((out[zeros] == 0.0).all())


def test_ties_single_expert_passthrough(base, experts, task_vectors):
    """Test K=1, keep-fraction 1 and scale 1 return the expert."""
    merged = merge_ties(base, task_vectors[:1], TiesConfig(keep_fraction=1.0, scale=1.0))
    assert merged.bitwise_equal(experts[0])


def test_ties_perfect_conflict_is_zero():
    """Test equal-magnitude opposite entries merge to 0."""
    a = torch.tensor([1.0, 2.0], dtype=torch.float64)
    b = torch.tensor([-1.0, 2.0], dtype=torch.float64)
    merged = ties_unit([a, b], keep_fraction=1.0)
    assert merged.tolist() == [0.0, 2.0]


def _ties_oracle(deltas: list[list[float]], keep_fraction: float) -> list[float]:
    trimmed = []
    for values in deltas:
        keep = max(1, math.ceil(keep_fraction * len(values)))
        threshold = sorted((abs(v) for v in values), reverse=True)[keep - 1]
        trimmed.append([v if abs(v) >= threshold else 0.0 for v in values])
    merged = []
    for i in range(len(deltas[0])):
        column = [row[i] for row in trimmed]
        total = 0.0
        for value in column:
            total += value
        sign = (total > 0) - (total < 0)
        agreeing = [v for v in column if sign != 0 and (v > 0) - (v < 0) == sign]
        if agreeing:
            acc = 0.0
            for value in agreeing:
                acc += value
            merged.append(acc / len(agreeing))
        else:
            merged.append(0.0)
    return merged


def test_ties_matches_stepwise_oracle():
    """Test K=3 random dyadic vectors against a trim/elect/merge loop."""
    generator = torch.Generator().manual_seed(21)
    deltas = [
        dyadic(torch.randn(12, generator=generator, dtype=torch.float64), 16) for _ in range(3)
    ]
    merged = ties_unit(deltas, keep_fraction=0.5)
    assert merged.tolist() == _ties_oracle([d.tolist() for d in deltas], 0.5)


def test_ties_needs_vectors(base):
    """Test an empty expert list is refused."""
    with pytest.raises(ConfigError):
        merge_ties(base, [], TiesConfig())
