"""Pytest configuration and fixtures."""

import pytest
import torch

from src.config import Settings
from src.merging import compute_task_vector
from src.model import ModelConfig, ModelParams
from src.tasks import DEFAULT_TASKS, build_calibration


def dyadic(tensor: torch.Tensor, denominator: int = 256) -> torch.Tensor:
    """Round to multiples of 1/denominator so sums and differences stay exact."""
    return torch.round(tensor * denominator) / denominator


def perturb(base: ModelParams, seed: int, scale: float = 0.125) -> ModelParams:
    """A fake expert: base plus seeded dyadic noise on every unit."""
    generator = torch.Generator().manual_seed(seed)
    return base.map(
        lambda _, t: t + dyadic(scale * torch.randn(t.shape, generator=generator, dtype=t.dtype))
    )


@pytest.fixture
def settings(tmp_path):
    """Settings isolated from the environment, writing under a temp dir."""
    return Settings(
        _env_file=None,
        output_dir=tmp_path / "runs",
        log_json=False,
        log_level="WARNING",
        log_every=1000,
    )


@pytest.fixture
def tiny_config():
    """Two blocks of width 8: every unit kind, cheap forward passes."""
    return ModelConfig(d_model=8, n_heads=2, n_blocks=2, d_mlp=16, max_seq_len=10)


@pytest.fixture
def base(tiny_config):
    """Seeded dyadic base parameters."""
    params = ModelParams.initialize(tiny_config, seed=0)
    return params.map(lambda _, t: dyadic(t))


@pytest.fixture
def experts(base):
    """Two perturbed experts of the base, one per calibration task."""
    return [perturb(base, seed=1), perturb(base, seed=2)]


@pytest.fixture
def task_vectors(base, experts):
    """Task vectors of the two experts."""
    return [
        compute_task_vector(base, expert, expert_id)
        for expert, expert_id in zip(experts, ("modadd", "reverse"))
    ]


@pytest.fixture
def tasks():
    """The modular-addition and reversal tasks."""
    return list(DEFAULT_TASKS[:2])


@pytest.fixture
def calib(tasks, tiny_config):
    """Three unlabeled prompts per task."""
    return build_calibration(tasks, 3, seed=0, max_seq_len=tiny_config.max_seq_len)
