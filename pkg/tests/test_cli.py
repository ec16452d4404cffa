"""Tests for the command-line interface."""

import json
from unittest.mock import patch

import numpy as np
import pytest

from src.errors import BoundViolationError, InvariantViolation
from src.simple_cli import EXIT_ERROR, EXIT_INVARIANT, EXIT_OK, SimpleCLI


@pytest.fixture
def cli():
    """Fixture for SimpleCLI."""
    return SimpleCLI()


@pytest.fixture
def config_file(tmp_path):
    """A small worst-case experiment writing into tmp_path/out."""
    path = tmp_path / "experiment.ini"
    path.write_text(
        "[topology]\nkind = ring\nn_agents = 4\n\n"
        "[algorithm]\nhorizon = 60\nblock_len = 20\n\n"
        f"[output]\ndir = {tmp_path / 'out'}\n"
    )
    return path


def test_run_writes_outputs(cli, config_file, tmp_path):
    """Test that `run` writes telemetry and a summary."""
    assert cli.run(["run", str(config_file)]) == EXIT_OK
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["parameters"]["block_len"] == 20
    assert summary["parameters"]["theory_void"] is True
    assert (tmp_path / "out" / "run_000.csv").exists()


def test_run_with_bad_config_returns_error(cli, tmp_path):
    """Test that a config error maps to exit code 1."""
    path = tmp_path / "bad.ini"
    path.write_text("[algorithm]\nvariant = quantum\n")
    assert cli.run(["run", str(path)]) == EXIT_ERROR


def test_run_with_missing_config_returns_error(cli, tmp_path):
    """Test that a missing config file maps to exit code 1."""
    assert cli.run(["run", str(tmp_path / "missing.ini")]) == EXIT_ERROR


def test_invariant_violation_returns_two(cli, config_file):
    """Test that invariant violations map to exit code 2."""
    with patch("src.simple_cli.run_experiment", side_effect=InvariantViolation("consensus drifted")):
        assert cli.run(["run", str(config_file)]) == EXIT_INVARIANT


def test_other_library_errors_return_one(cli, config_file):
    """Test that other library errors map to exit code 1."""
    with patch("src.simple_cli.run_experiment", side_effect=BoundViolationError("estimate too large")):
        assert cli.run(["run", str(config_file)]) == EXIT_ERROR


def test_keyboard_interrupt(cli, config_file):
    """Test graceful handling of an interrupt."""
    with patch("src.simple_cli.run_experiment", side_effect=KeyboardInterrupt):
        assert cli.run(["run", str(config_file)]) == EXIT_ERROR


def test_sweep_prints_a_table(cli, config_file, tmp_path, capsys):
    """Test that `sweep` runs once per value."""
    code = cli.run(["sweep", str(config_file), "--vary", "algorithm.block_len", "--values", "10,30"])
    assert code == EXIT_OK
    assert "Sweep over algorithm.block_len" in capsys.readouterr().out
    assert (tmp_path / "out" / "algorithm.block_len=10" / "summary.json").exists()
    assert (tmp_path / "out" / "algorithm.block_len=30" / "summary.json").exists()


def test_sweep_needs_values(cli, config_file):
    """Test that an empty value list is a config error."""
    assert cli.run(["sweep", str(config_file), "--vary", "algorithm.block_len", "--values", ","]) == EXIT_ERROR


def test_validate_reports_a_theory_void_dry_run(cli, config_file, capsys):
    """Test that a dry-run with an overridden block length says its checks were not enforced."""
    assert cli.run(["validate", str(config_file)]) == EXIT_OK
    assert "Theory-void dry-run" in capsys.readouterr().out


def test_validate(cli, tmp_path, capsys):
    """Test the strict dry-run on theorem parameters."""
    path = tmp_path / "complete.ini"
    path.write_text("[topology]\nkind = complete\nn_agents = 4\n\n[algorithm]\nhorizon = 300\n")
    assert cli.run(["validate", str(path)]) == EXIT_OK
    assert "All runtime checks passed" in capsys.readouterr().out


def test_spanner_command(cli, tmp_path, capsys):
    """Test spanner construction from a CSV action set."""
    actions = tmp_path / "actions.csv"
    np.savetxt(actions, np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]), delimiter=",")
    out = tmp_path / "spanner"
    assert cli.run(["spanner", str(actions), "--out", str(out)]) == EXIT_OK
    assert (out / "spanner_indices.txt").read_text().split() == ["1", "2", "3"]
    assert "certified" in capsys.readouterr().out


def test_strict_spanner_cap_fails(cli, tmp_path):
    """Test that an impossible strict cap is reported as an error."""
    actions = tmp_path / "actions.csv"
    np.savetxt(actions, np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]), delimiter=",")
    assert cli.run(["spanner", str(actions), "--cap", "2", "--strict"]) == EXIT_ERROR


def test_main_exits_with_the_cli_code(config_file, tmp_path, monkeypatch):
    """Test that main() passes the exit code to sys.exit."""
    from src import main as main_module

    monkeypatch.setattr(main_module, "setup_logging", lambda: None)
    with pytest.raises(SystemExit) as excinfo:
        main_module.main(["run", str(tmp_path / "missing.ini")])
    assert excinfo.value.code == EXIT_ERROR
