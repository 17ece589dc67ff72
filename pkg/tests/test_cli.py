"""Tests for the click command surface."""

import pytest
from click.testing import CliRunner

import src
import torch

from src.cli.options import build_overrides, parse_betas
from src.exceptions import ConfigError
from src.main import cli, configure_torch


@pytest.fixture
def runner():
    return CliRunner()


def test_help_lists_every_command(runner):
    """Test the group help names all subcommands."""
    result = runner.invoke(cli, ["--help"])
    assert result.exit_code == 0
    names = [
        "gen-tasks",
        "train-base",
        "train-expert",
        "train-mixture",
        "merge",
        "analyze-importance",
        "eval",
        "report",
        "run",
        "sweep",
    ]
    for name in names:
        assert name in result.output


def test_version(runner):
    """Test the version flag."""
    result = runner.invoke(cli, ["--version"])
    assert result.exit_code == 0
    assert src.__version__ in result.output


def _flat(text: str) -> str:
    return " ".join(text.split())


def test_merge_help_shows_defaults_and_sources(runner):
    """Test merge flags document their defaults and where each default comes from."""
    result = runner.invoke(cli, ["merge", "--help"])
    assert result.exit_code == 0
    text = _flat(result.output)
    assert "[default: 0.8; reference setting of the method]" in text
    assert "[default: 0.3; reference setting of the method]" in text
    assert "[default: 1.2; reference setting of the method]" in text
    assert "[default: 5; reference setting of the method]" in text
    assert "[default: the middle block; reference setting of the method]" in text
    assert "[default: 1.1; midpoint of the reference band 0.9 to 1.2]" in text
    assert "[default: 1.0; desk-scale choice, no reference value]" in text
    assert "--gate" in text


def test_sweep_help_offers_seed_axis(runner):
    """Test the sweep command accepts seeds as an axis."""
    result = runner.invoke(cli, ["sweep", "--help"])
    assert result.exit_code == 0
    assert "seed" in result.output
    assert "--no-mixture" in result.output


def test_configure_torch_pins_threads_and_determinism(settings):
    """Test the thread count and deterministic-kernel switch are applied."""
    threads = torch.get_num_threads()
    deterministic = torch.are_deterministic_algorithms_enabled()
    try:
        configure_torch(settings.model_copy(update={"torch_threads": 1}))
        assert torch.get_num_threads() == 1
        assert torch.are_deterministic_algorithms_enabled()
    finally:
        torch.set_num_threads(threads)
        torch.use_deterministic_algorithms(deterministic)


def test_gen_tasks_writes_preview(runner, tmp_path):
    """Test gen-tasks prints the suite and writes its stage directory."""
    result = runner.invoke(cli, ["gen-tasks", "--out", str(tmp_path), "--preview", "2"])
    assert result.exit_code == 0, result.output
    assert "modadd\tmodadd\tprompt_len=6" in result.output
    assert (tmp_path / "tasks" / "preview.csv").exists()
    assert (tmp_path / "tasks" / "stage.json").exists()


def test_invalid_config_prints_error_line(runner, tmp_path):
    """Test a bad config value exits 1 with a CONFIG error line."""
    config = tmp_path / "bad.yaml"
    config.write_text("calib_samples: 0\n", encoding="utf-8")
    result = runner.invoke(cli, ["gen-tasks", "--config", str(config)])
    assert result.exit_code == 1
    assert "error=CONFIG stage=gen-tasks" in result.output
    assert "calib_samples" in result.output


def test_bad_lambda_list_is_config_error(runner, tmp_path):
    """Test a non-numeric lambda list fails before any training."""
    result = runner.invoke(cli, ["merge", "--out", str(tmp_path), "--lambda", "0.1,x"])
    assert result.exit_code == 1
    assert "error=CONFIG" in result.output
    assert not (tmp_path / "base").exists()


def test_build_overrides_nests_flags():
    """Test flag values map onto nested run-config keys."""
    params = {
        "seed": 5,
        "gamma": 0.2,
        "no_logit_loss": True,
        "hidden_layers": "0,1",
        "chunk_all": 3,
        "train_steps": 10,
    }
    out = build_overrides(params, ["modadd", "reverse"], train_target="expert_hyper")
    assert out["seed"] == 5
    assert out["merge"]["align"] == {"gamma": 0.2, "hidden_layers": [0, 1], "use_logit_loss": False}
    assert out["merge"]["pp"] == {"chunk_all": 3}
    assert out["expert_hyper"] == {"steps": 10}


def test_parse_betas():
    """Test named task weights default unnamed tasks to 1."""
    assert parse_betas("reverse=0.5", ["modadd", "reverse"]) == [1.0, 0.5]
    with pytest.raises(ConfigError):
        parse_betas("parity=2", ["modadd", "reverse"])
    with pytest.raises(ConfigError):
        parse_betas("modadd", ["modadd"])
