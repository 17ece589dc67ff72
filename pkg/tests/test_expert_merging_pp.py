"""Tests for importance scoring, chunk allocation and chunk-wise merging."""

import random
import time

import pytest
import torch

from src.exceptions import ConfigError, DegenerateInputError, SchemaMismatchError
from src.merging import (
    AlignConfig,
    ChunkCoefficients,
    ChunkPlan,
    ImportanceReport,
    LayerCoefficients,
    PlusPlusConfig,
    UnitStats,
    allocate_chunks,
    apply_chunk_coefficients,
    apply_coefficients,
    chunk_all,
    chunk_regularizer,
    chunk_shares,
    compute_importance,
    fit_pp,
    init_chunk_coefficients,
    plan_chunks,
    review_refinement,
    split_sizes,
    stage_of,
    unit_stats,
)
from src.model import UnitId, UnitKind
from tests.conftest import dyadic


def _report(importance: list[float], param_counts: list[int] | None = None) -> ImportanceReport:
    units = [UnitId(0, kind) for kind in list(UnitKind)[: len(importance)]]
    counts = param_counts or [1000] * len(importance)
    values = torch.tensor(importance, dtype=torch.float64)
    return ImportanceReport(
        expert_ids=["e"],
        units=units,
        n_blocks=1,
        alpha_abs=values.unsqueeze(0),
        weights=torch.ones(1, len(importance), dtype=torch.float64),
        param_counts=counts,
        raw=values,
        importance=values,
    )


def _stats(units, s: list[float], n: list[int]) -> UnitStats:
    weights = torch.tensor(s, dtype=torch.float64)
    return UnitStats("e", list(units), weights, weights / weights.sum(), torch.tensor(n))


@pytest.fixture
def stage1(base, task_vectors):
    """A stage-1 result with distinct dyadic coefficients per unit."""
    generator = torch.Generator().manual_seed(12)
    noise = torch.rand(2, len(base.units), generator=generator, dtype=torch.float64)
    alpha = dyadic(0.2 + 0.4 * noise)
    prior = torch.tensor([0.3, 0.3], dtype=torch.float64)
    return LayerCoefficients([tv.expert_id for tv in task_vectors], base.units, alpha, prior)


def test_stage_of_splits_blocks_in_thirds():
    """Test early / middle / late over six blocks and the global bucket."""
    stages = [stage_of(UnitId(b, UnitKind.ATTN_Q), 6) for b in range(6)]
    assert stages == ["early", "early", "middle", "middle", "late", "late"]
    assert stage_of(UnitId(None, UnitKind.HEAD), 6) == "global"
    assert [stage_of(UnitId(b, UnitKind.ATTN_Q), 4) for b in range(4)] == [
        "early",
        "middle",
        "late",
        "late",
    ]


def test_importance_uniform_inputs():
    """Test uniform alpha, weights and sizes give uniform importance."""
    units = [UnitId(0, UnitKind.ATTN_Q), UnitId(0, UnitKind.ATTN_K), UnitId(0, UnitKind.ATTN_V)]
    coeffs = LayerCoefficients.constant(["e"], units, [0.5])
    report = compute_importance(coeffs, [_stats(units, [1.0, 1.0, 1.0], [4, 4, 4])])
    assert report.importance.tolist() == pytest.approx([1 / 3] * 3, rel=1e-12)


def test_importance_single_support():
    """Test one unit with nonzero alpha takes all the importance."""
    units = [UnitId(0, UnitKind.ATTN_Q), UnitId(0, UnitKind.MLP_UP)]
    alpha = torch.tensor([[0.0, 0.7]], dtype=torch.float64)
    coeffs = LayerCoefficients(["e"], units, alpha, torch.zeros(1, dtype=torch.float64))
    report = compute_importance(coeffs, [_stats(units, [2.0, 1.0], [16, 32])])
    assert report.importance.tolist() == [0.0, 1.0]


def test_importance_matches_scalar_oracle(base, task_vectors, stage1):
    """Test random inputs against a per-unit loop."""
    stats = [unit_stats(tv) for tv in task_vectors]
    report = compute_importance(stage1, stats)
    raw = []
    for j, unit in enumerate(base.units):
        score = sum(
            abs(float(stage1.alpha[k, j])) * stats[k].share(unit) for k in range(len(stats))
        )
        raw.append(score * base[unit].numel())
    total = sum(raw)
    for got, value in zip(report.importance.tolist(), raw):
        assert got == pytest.approx(value / total, rel=1e-12)
    assert sum(report.by_stage().values()) == pytest.approx(1.0, abs=1e-12)
    # two blocks are too few for thirds, so both land in "late"
    assert set(report.by_stage()) == {"late", "global"}


def test_importance_all_zero_is_degenerate():
    """Test all-zero coefficients cannot be normalized."""
    units = [UnitId(0, UnitKind.ATTN_Q)]
    coeffs = LayerCoefficients.constant(["e"], units, [0.0])
    with pytest.raises(DegenerateInputError):
        compute_importance(coeffs, [_stats(units, [1.0], [4])])


def test_importance_schema_mismatch(stage1, task_vectors):
    """Test the stats count must match the coefficient rows."""
    with pytest.raises(SchemaMismatchError):
        compute_importance(stage1, [unit_stats(task_vectors[0])])


@pytest.mark.parametrize(
    "importance,budget,kappa,expected",
    [
        ([0.5, 0.3, 0.2], 10, 1.0, [5, 3, 2]),
        ([0.4, 0.1, 0.3, 0.2], 8, 0.0, [2, 2, 2, 2]),
        ([0.7, 0.2, 0.1], 6, 2.0, [5, 0, 0]),
    ],
)
def test_allocate_chunks_examples(importance, budget, kappa, expected):
    """Test hand-evaluated allocations."""
    plan = allocate_chunks(_report(importance), budget, kappa)
    assert plan.counts == expected
    assert plan.frozen_units == [u for u, m in zip(plan.units, expected) if m == 0]


def test_allocate_chunks_fuzz_budget_and_monotonicity():
    """Test the budget bound and importance-monotone counts on ten thousand seeded inputs."""
    rng = random.Random(0)
    started = time.perf_counter()
    for _ in range(10_000):
        size = rng.randint(1, 9)
        importance = [rng.random() for _ in range(size)]
        total = sum(importance)
        importance = [x / total for x in importance]
        budget = rng.uniform(0.5, 3.0) * size
        kappa = rng.choice([0.0, 0.5, 1.0, 1.2, 2.0, 4.0])
        plan = allocate_chunks(_report(importance), budget, kappa)
        assert sum(plan.counts) <= budget
        for a in range(size):
            for b in range(size):
                if importance[a] > importance[b]:
                    assert plan.counts[a] >= plan.counts[b]
    assert time.perf_counter() - started < 10.0


def test_chunk_shares_sharpen_with_kappa():
    """Test raising κ moves share towards the more important unit of every pair."""
    rng = random.Random(1)
    kappas = [0.0, 0.5, 1.0, 1.2, 2.0, 4.0]
    for _ in range(500):
        size = rng.randint(2, 9)
        importance = torch.tensor([rng.random() + 1e-3 for _ in range(size)], dtype=torch.float64)
        importance = importance / importance.sum()
        shares = [chunk_shares(importance, kappa) for kappa in kappas]
        top, bottom = int(importance.argmax()), int(importance.argmin())
        for low, high in zip(shares, shares[1:]):
            assert float(high[top]) >= float(low[top]) - 1e-12
            assert float(high[bottom]) <= float(low[bottom]) + 1e-12
        for a in range(size):
            for b in range(size):
                if importance[a] > importance[b]:
                    ratios = [float(s[a] / s[b]) for s in shares]
                    assert all(y >= x * (1 - 1e-12) for x, y in zip(ratios, ratios[1:]))
        budget = rng.uniform(0.5, 3.0) * size
        for kappa in kappas:
            counts = allocate_chunks(_report(importance.tolist()), budget, kappa).counts
            assert counts[top] >= counts[bottom]


def test_kappa_zero_allocates_evenly():
    """Test κ = 0 ignores importance altogether."""
    shares = chunk_shares(torch.tensor([0.9, 0.1, 0.0], dtype=torch.float64), 0.0)
    assert shares.tolist() == pytest.approx([1 / 3] * 3, rel=1e-12)


def test_allocate_chunks_clamps_to_unit_size():
    """Test a unit never gets more chunks than scalars."""
    plan = allocate_chunks(_report([0.9, 0.1], param_counts=[3, 100]), 20, 1.0)
    assert plan.counts == [3, 2]


def test_allocate_chunks_rejects_bad_budget():
    """Test nonpositive budgets and negative steepness."""
    with pytest.raises(ConfigError):
        allocate_chunks(_report([1.0]), 0, 1.0)
    with pytest.raises(ConfigError):
        allocate_chunks(_report([1.0]), 4, -1.0)


def test_split_sizes_near_equal():
    """Test contiguous near-equal chunk sizes and boundaries."""
    assert split_sizes(10, 3) == [4, 3, 3]
    assert split_sizes(4, 4) == [1, 1, 1, 1]
    plan = ChunkPlan(
        budget=3, kappa=1.0, units=[UnitId(0, UnitKind.NORM1)], counts=[3], param_counts=[10]
    )
    assert plan.boundaries(UnitId(0, UnitKind.NORM1)) == [(0, 4), (4, 7), (7, 10)]
    with pytest.raises(ConfigError):
        split_sizes(3, 4)


def test_chunk_all_assigns_uniform_counts(base):
    """Test the uniform plan caps counts at the unit size."""
    counts = [base[u].numel() for u in base.units]
    plan = chunk_all(base.units, counts, 2)
    assert plan.counts == [min(2, n) for n in counts]
    assert plan.total_chunks <= plan.budget


def _uniform_plan(base, chunks: int) -> ChunkPlan:
    return chunk_all(base.units, [base[u].numel() for u in base.units], chunks)


def test_equal_chunks_collapse_to_layer_wise(base, task_vectors, stage1):
    """Test equal coefficients within every unit reproduce the layer-wise merge."""
    plan = _uniform_plan(base, 3)
    coeffs = init_chunk_coefficients(plan, stage1)
    merged = apply_chunk_coefficients(base, task_vectors, plan, coeffs)
    assert merged.bitwise_equal(apply_coefficients(base, task_vectors, stage1))


def test_one_chunk_per_scalar_matches_elementwise(base, task_vectors):
    """Test per-scalar sign coefficients against an elementwise product."""
    counts = [base[u].numel() for u in base.units]
    plan = ChunkPlan(
        budget=sum(counts), kappa=1.0, units=base.units, counts=counts, param_counts=counts
    )
    generator = torch.Generator().manual_seed(2)
    chunked = {
        u: torch.randint(0, 2, (1, n), generator=generator).to(torch.float64) * 2 - 1
        for u, n in zip(base.units, counts)
    }
    coeffs = ChunkCoefficients(
        ["modadd"], base.units, chunked, {}, torch.zeros(1, dtype=torch.float64)
    )
    merged = apply_chunk_coefficients(base, task_vectors[:1], plan, coeffs)
    for unit in base.units:
        signs = chunked[unit].reshape(base[unit].shape)
        assert torch.equal(merged[unit], base[unit] + signs * task_vectors[0][unit])


def test_zero_chunk_coefficients_give_base(base, task_vectors, stage1):
    """Test all-zero chunk and frozen coefficients reproduce the base."""
    plan = ChunkPlan(
        budget=len(base.units),
        kappa=1.0,
        units=base.units,
        counts=[2 if i % 2 else 0 for i in range(len(base.units))],
        param_counts=[base[u].numel() for u in base.units],
    )
    zero = LayerCoefficients(
        stage1.expert_ids, base.units, torch.zeros_like(stage1.alpha), stage1.prior
    )
    coeffs = init_chunk_coefficients(plan, zero)
    assert apply_chunk_coefficients(base, task_vectors, plan, coeffs).bitwise_equal(base)


def test_plan_mismatch_is_refused(base, task_vectors, stage1):
    """Test coefficients built for one plan cannot be applied with another."""
    coeffs = init_chunk_coefficients(_uniform_plan(base, 2), stage1)
    with pytest.raises(SchemaMismatchError):
        apply_chunk_coefficients(base, task_vectors, _uniform_plan(base, 3), coeffs)


def test_chunk_regularizer_value(base, stage1):
    """Test (1/(B*K)) * sum |alpha - prior| over chunks, and zero for a frozen plan."""
    unit = UnitId(0, UnitKind.NORM1)
    coeffs = ChunkCoefficients(
        expert_ids=["a"],
        units=[unit],
        chunked={unit: torch.tensor([[0.5, 0.1]], dtype=torch.float64)},
        frozen={},
        prior=torch.tensor([0.3], dtype=torch.float64),
    )
    assert float(chunk_regularizer(coeffs, budget=2.0)) == pytest.approx(0.4 / 2.0, rel=1e-12)
    frozen = init_chunk_coefficients(
        ChunkPlan(
            0.0, 0.0, base.units, [0] * len(base.units), [base[u].numel() for u in base.units]
        ),
        stage1,
    )
    assert float(chunk_regularizer(frozen, budget=0.0)) == 0.0


def test_plan_chunks_respects_budget(base, task_vectors, stage1):
    """Test the default plan stays within B = 1.1 x #units."""
    stats = [unit_stats(tv) for tv in task_vectors]
    plan, report = plan_chunks(base, stage1, stats, PlusPlusConfig())
    assert plan.total_chunks <= 1.1 * len(base.units) + 1e-9
    assert plan.units == report.units == base.units
    disabled, _ = plan_chunks(base, stage1, stats, PlusPlusConfig(enabled=False))
    assert disabled.total_chunks == 0


def test_fit_pp_zero_steps_preserves_stage1(base, experts, task_vectors, calib, stage1, settings):
    """Test initialization reproduces the stage-1 merged model."""
    coeffs, log = fit_pp(
        base, task_vectors, experts, calib, AlignConfig(steps=0), stage1, settings=settings
    )
    assert coeffs.trainable_count() > 0
    plan = ChunkPlan(
        budget=1.1 * len(base.units),
        kappa=1.2,
        units=base.units,
        counts=[coeffs.chunk_counts()[u] for u in base.units],
        param_counts=[base[u].numel() for u in base.units],
    )
    merged = apply_chunk_coefficients(base, task_vectors, plan, coeffs)
    assert merged.bitwise_equal(apply_coefficients(base, task_vectors, stage1))
    assert log.final_total == log.initial_total


def test_fit_pp_frozen_plan_is_noop(base, experts, task_vectors, calib, stage1, settings):
    """Test a budget too small for any chunk leaves every unit at its stage-1 value."""
    cfg = AlignConfig(steps=10)
    coeffs, log = fit_pp(
        base,
        task_vectors,
        experts,
        calib,
        cfg,
        stage1,
        pp_cfg=PlusPlusConfig(budget_factor=0.01),
        settings=settings,
    )
    assert not coeffs.chunked
    for j, unit in enumerate(base.units):
        assert torch.equal(coeffs.frozen[unit], stage1.alpha[:, j])
    assert log.steps == 0


def test_fit_pp_descends_from_stage1(base, experts, task_vectors, calib, stage1, settings):
    """Test refinement never ends above its own stage-1 starting point."""
    cfg = AlignConfig(steps=15, lr=0.02)
    coeffs, log = fit_pp(
        base,
        task_vectors,
        experts,
        calib,
        cfg,
        stage1,
        pp_cfg=PlusPlusConfig(chunk_all=2),
        settings=settings,
    )
    assert log.final_total <= log.initial_total
    frozen_before = {u for u in base.units if base[u].numel() < 2}
    assert set(coeffs.frozen) <= frozen_before


@pytest.mark.parametrize(
    "gate,refined,expected",
    [
        ("none", (9.0, 0.0), (True, "unchecked")),
        ("alignment", (0.4, None), (True, "passed")),
        ("alignment", (0.6, None), (False, "alignment")),
        ("validation", (0.4, 0.8), (True, "passed")),
        ("validation", (0.4, 0.7), (False, "validation")),
        ("validation", (0.6, 0.9), (False, "alignment")),
    ],
)
def test_review_refinement_verdicts(gate, refined, expected):
    """Test each gate against a stage-1 alignment of 0.5 and validation accuracy of 0.75."""
    align, accuracy = refined
    verdict = review_refinement(gate, align, 0.5, accuracy, 0.75)
    assert (verdict.kept, verdict.reason) == expected


def test_review_refinement_ties_keep_the_refinement():
    """Test equal losses and accuracies count as no regression."""
    assert review_refinement("validation", 0.5, 0.5, 0.75, 0.75).kept


def test_review_refinement_rejects_bad_inputs():
    """Test an unknown gate and a validation gate without accuracies."""
    with pytest.raises(ConfigError):
        review_refinement("strict", 0.1, 0.5)
    with pytest.raises(ConfigError):
        review_refinement("validation", 0.1, 0.5)
