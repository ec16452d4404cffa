"""Tests for settings and experiment config parsing."""

import pytest

from src.config import Settings, get_settings, load_experiment_config, parse_experiment_config
from src.errors import ConfigError

VALID_CONFIG = """
[topology]
kind = grid
n_agents = 16
rows = 4
cols = 4

[algorithm]
variant = bobw
horizon = 5000
n_arms = 4
num_seeds = 3

[environment]
generator = gap
delta = 0.1
k_star = 2

[output]
write_csv = false
"""


# Test Settings
def test_settings_defaults():
    """Test the default settings values."""
    settings = Settings()
    assert settings.log_level == "INFO"
    assert settings.output_dir == "runs"
    assert settings.consensus_floor == 1e-12
    assert get_settings() is get_settings()


def test_settings_from_environment(monkeypatch):
    """Test that settings pick up environment variables."""
    monkeypatch.setenv("STRICT_MODE", "true")
    monkeypatch.setenv("OUTPUT_DIR", "/tmp/elsewhere")
    settings = Settings()
    assert settings.strict_mode
    assert settings.output_dir == "/tmp/elsewhere"


# Test parse_experiment_config
def test_parse_valid_config():
    """Test parsing a complete config."""
    cfg = parse_experiment_config(VALID_CONFIG)
    assert cfg.topology.kind == "grid"
    assert (cfg.topology.rows, cfg.topology.cols) == (4, 4)
    assert cfg.algorithm.variant == "bobw"
    assert cfg.algorithm.num_seeds == 3
    assert cfg.environment.delta == 0.1
    assert not cfg.output.write_csv
    assert cfg.algorithm.block_len is None


def test_sections_default_when_missing():
    """Test that omitted sections take their defaults."""
    cfg = parse_experiment_config("[algorithm]\nhorizon = 100\n")
    assert cfg.topology.kind == "complete"
    assert cfg.environment.generator == "iid_uniform"


def test_empty_values_are_ignored():
    """Test that a blank value means the default."""
    cfg = parse_experiment_config("[algorithm]\nblock_len =\n")
    assert cfg.algorithm.block_len is None


def test_arm_losses_list():
    """Test the comma-separated arm loss list."""
    cfg = parse_experiment_config("[environment]\ngenerator = constant\narm_losses = 0, 0.5\n")
    assert cfg.environment.arm_losses == [0.0, 0.5]


@pytest.mark.parametrize(
    "text",
    [
        "[algorithm]\nhorizn = 100\n",
        "[network]\nkind = ring\n",
        "[algorithm]\nhorizon = 2\n",
        "[algorithm]\nvariant = linear\n[environment]\ngenerator = iid_gaussian_normalized\n",
        "[algorithm]\nvariant = worst_case\n[environment]\ngenerator = rotating\n",
        "[algorithm]\nvariant = linear\ndim = 3\n",
        "[topology]\nkind = edge_list\n",
        "no section header\n",
    ],
    ids=[
        "unknown_key",
        "unknown_section",
        "horizon_too_short",
        "linear_without_dim",
        "linear_generator_for_karmed",
        "karmed_generator_for_linear",
        "edge_list_without_path",
        "malformed",
    ],
)
def test_invalid_configs_raise(text):
    """Test that invalid configs raise ConfigError."""
    with pytest.raises(ConfigError):
        parse_experiment_config(text)


# Test load_experiment_config
def test_load_experiment_config(tmp_path):
    """Test loading a config from disk."""
    path = tmp_path / "experiment.ini"
    path.write_text(VALID_CONFIG)
    assert load_experiment_config(path).algorithm.horizon == 5000


def test_load_missing_config(tmp_path):
    """Test loading a config file that does not exist."""
    with pytest.raises(ConfigError, match="not found"):
        load_experiment_config(tmp_path / "missing.ini")


# Test with_override
def test_with_override_validates_the_value():
    """Test overriding a key by its dotted name."""
    cfg = parse_experiment_config(VALID_CONFIG)
    changed = cfg.with_override("algorithm.horizon", "800")
    assert changed.algorithm.horizon == 800
    assert cfg.algorithm.horizon == 5000


@pytest.mark.parametrize(
    "key,value",
    [("algorithm.horizn", "10"), ("horizon", "10"), ("algorithm.horizon", "-5"), ("results.dir", "x")],
)
def test_with_override_rejects_bad_keys_and_values(key, value):
    """Test that bad overrides raise ConfigError."""
    with pytest.raises(ConfigError):
        parse_experiment_config(VALID_CONFIG).with_override(key, value)


def test_strict_falls_back_to_settings():
    """Test that output.strict defaults to the STRICT_MODE setting."""
    cfg = parse_experiment_config("[algorithm]\nhorizon = 100\n")
    assert cfg.strict == get_settings().strict_mode
    assert parse_experiment_config("[output]\nstrict = true\n").strict
