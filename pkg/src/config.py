"""Configuration management for the gossip bandit simulator."""

import configparser
import logging
from pathlib import Path
from typing import Any, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .errors import ConfigError

logger = logging.getLogger(__name__)


class Settings(BaseSettings):
    """Application settings loaded from environment variables."""

    # Logging Configuration
    log_level: str = Field(default="INFO")
    log_file: str = Field(default="gossip_bandits.log")

    # Output Configuration
    output_dir: str = Field(default="runs")

    # Diagnostics
    strict_mode: bool = Field(default=False)
    consensus_floor: float = Field(default=1e-12)
    ghost_tolerance: float = Field(default=1e-6)

    # Spanner search
    spanner_exhaustive_limit: int = Field(default=100_000)

    model_config = SettingsConfigDict(
        env_file=".env",
        case_sensitive=False,
        env_prefix="",
        extra="ignore"
    )


# Global settings instance
settings = Settings()


def get_settings() -> Settings:
    """Get the global settings instance."""
    return settings


TopologyKind = Literal[
    "ring", "path", "grid", "complete", "star", "random_regular", "erdos_renyi", "edge_list"
]
Variant = Literal["worst_case", "small_loss", "bobw", "linear"]
Generator = Literal[
    "iid_uniform",
    "piecewise_shift",
    "heterogeneous_bias",
    "small_loss_regime",
    "constant",
    "gap",
    "iid_gaussian_normalized",
    "rotating",
    "heterogeneous",
]

KARMED_GENERATORS = {
    "iid_uniform", "piecewise_shift", "heterogeneous_bias", "small_loss_regime", "constant", "gap"
}
LINEAR_GENERATORS = {"iid_gaussian_normalized", "rotating", "heterogeneous"}


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class TopologyConfig(_Section):
    """Communication graph and gossip matrix selection."""

    kind: TopologyKind = "complete"
    n_agents: int = Field(default=16, ge=2)
    rows: Optional[int] = None
    cols: Optional[int] = None
    degree: Optional[int] = None
    p: Optional[float] = None
    seed: int = 0
    weights: Literal["metropolis", "lazy_metropolis"] = "metropolis"
    edge_list: Optional[str] = None


class AlgorithmConfig(_Section):
    """Variant, horizon, problem size, seeds and parameter overrides."""

    variant: Variant = "worst_case"
    horizon: int = Field(default=10_000, ge=3)
    n_arms: int = Field(default=2, ge=2)
    dim: Optional[int] = Field(default=None, ge=1)
    action_set: Optional[str] = None
    action_seed: int = 0
    spanner_cap: Optional[int] = Field(default=None, ge=1)
    strict_spanner: bool = False
    master_seed: int = 0
    num_seeds: int = Field(default=1, ge=1)
    block_len: Optional[int] = Field(default=None, ge=0)
    clamp_block: bool = True
    eta: Optional[float] = Field(default=None, gt=0)
    gamma: Optional[float] = Field(default=None, gt=0)
    beta: Optional[float] = Field(default=None, ge=0)
    kappa: Optional[float] = Field(default=None, ge=0)
    l_star: Optional[float] = Field(default=None, ge=0)
    uniform_policy: bool = False


class EnvironmentConfig(_Section):
    """Loss generator and its parameters."""

    generator: Generator = "iid_uniform"
    seed: Optional[int] = None
    delta: float = 0.25
    k_star: int = 0
    heterogeneous: bool = False
    distribution: Literal["bernoulli", "beta"] = "bernoulli"
    phases: int = Field(default=4, ge=1)
    low: float = 0.2
    high: float = 0.8
    tilt: float = 0.05
    best_mean: float = 0.0
    other_mean: float = 0.5
    arm_losses: Optional[List[float]] = None
    noise: float = 0.3
    period: int = Field(default=1000, ge=1)
    scale: float = 1.0

    @field_validator("arm_losses", mode="before")
    @classmethod
    def _split_list(cls, value: Any) -> Any:
        if isinstance(value, str):
            return [float(v) for v in value.split(",") if v.strip()]
        return value


class OutputConfig(_Section):
    """Where telemetry goes and which diagnostics run."""

    dir: Optional[str] = None
    diagnostics: bool = True
    strict: Optional[bool] = None
    write_csv: bool = True


class ExperimentConfig(_Section):
    """A full experiment: topology, algorithm, environment, output."""

    topology: TopologyConfig = Field(default_factory=TopologyConfig)
    algorithm: AlgorithmConfig = Field(default_factory=AlgorithmConfig)
    environment: EnvironmentConfig = Field(default_factory=EnvironmentConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)

    @model_validator(mode="after")
    def _check_consistency(self) -> "ExperimentConfig":
        linear = self.algorithm.variant == "linear"
        generator = self.environment.generator
        if linear and generator not in LINEAR_GENERATORS:
            raise ValueError(f"generator '{generator}' is not a linear generator")
        if not linear and generator not in KARMED_GENERATORS:
            raise ValueError(f"generator '{generator}' needs the linear variant")
        if linear and self.algorithm.dim is None and self.algorithm.action_set is None:
            raise ValueError("linear variant needs 'dim' or 'action_set'")
        if self.topology.kind == "edge_list" and not self.topology.edge_list:
            raise ValueError("kind 'edge_list' needs an 'edge_list' path")
        return self

    @property
    def strict(self) -> bool:
        if self.output.strict is None:
            return get_settings().strict_mode
        return self.output.strict

    def with_override(self, dotted_key: str, value: Any) -> "ExperimentConfig":
        """Return a validated copy with `section.key` replaced."""
        try:
            section, key = dotted_key.split(".", 1)
        except ValueError:
            raise ConfigError(f"override key must look like 'section.key', got '{dotted_key}'")
        data = self.model_dump()
        if section not in data or key not in data[section]:
            raise ConfigError(f"unknown config key '{dotted_key}'")
        data[section][key] = value
        return _validate(data)


SECTIONS = ("topology", "algorithm", "environment", "output")


def _validate(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid experiment config: {e}") from e


def parse_experiment_config(text: str) -> ExperimentConfig:
    """Parse the sectioned key-value text format."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"malformed config: {e}") from e

    data: dict = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        data[section] = {k: v for k, v in parser.items(section) if v.strip() != ""}
    return _validate(data)


def load_experiment_config(path: str | Path) -> ExperimentConfig:
    """Load an experiment config file."""
    config_file = Path(path)
    if not config_file.exists():
        raise ConfigError(f"config file not found: {config_file}")
    logger.info(f"Loading experiment config from {config_file}")
    return parse_experiment_config(config_file.read_text())
