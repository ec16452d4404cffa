"""Oblivious loss generators for the K-armed and linear settings."""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Literal, Tuple

import numpy as np

from .errors import BadSpecError
from .karmed import LossTensor
from .linear import ActionSet

logger = logging.getLogger(__name__)

ENVIRONMENT_STREAM = 0

AdversarialGenerator = Literal["iid_uniform", "piecewise_shift", "heterogeneous_bias", "small_loss_regime", "constant"]
ThetaGenerator = Literal["iid_gaussian_normalized", "rotating", "heterogeneous"]


def make_environment_rng(seed: int, replay: int = 0) -> np.random.Generator:
    """Environment stream keyed by (seed, replay); it never collides with agent keys."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, ENVIRONMENT_STREAM, replay])))


@dataclass(frozen=True)
class StochasticSpec:
    """Per-agent means mu(i, k); losses are drawn i.i.d. around them."""

    means: np.ndarray = field(repr=False)
    distribution: Literal["bernoulli", "beta"] = "bernoulli"
    seed: int = 0
    replay: int = 0

    def __post_init__(self):
        mu = np.array(self.means, dtype=np.float64)
        if mu.ndim != 2 or mu.shape[1] < 2:
            raise BadSpecError(f"means must be an N x K matrix with K >= 2, got shape {mu.shape}")
        if np.min(mu) < 0.0 or np.max(mu) > 1.0:
            raise BadSpecError("means must lie in [0, 1]")
        mu.setflags(write=False)
        object.__setattr__(self, "means", mu)
        gaps = self.gaps
        if np.sum(gaps <= 0.0) != 1:
            raise BadSpecError("stochastic instance needs a unique optimal arm")

    @property
    def global_means(self) -> np.ndarray:
        return self.means.mean(axis=0)

    @property
    def best_arm(self) -> int:
        return int(np.argmin(self.global_means))

    @property
    def gaps(self) -> np.ndarray:
        mu = self.global_means
        return mu - mu.min()


def gap_instance(
    delta: float,
    k_star: int,
    n_agents: int,
    n_arms: int,
    heterogeneous: bool = False,
    distribution: Literal["bernoulli", "beta"] = "bernoulli",
    seed: int = 0,
    replay: int = 0,
) -> StochasticSpec:
    """Best arm at 0.5 - delta/2, the rest at 0.5 + delta/2.

    The heterogeneous version adds per-agent offsets that cancel over the
    network, so every agent sees different local means but the global
    averages (and gaps) are unchanged.
    """
    if not 0.0 < delta <= 1.0:
        raise BadSpecError(f"gap must lie in (0, 1], got {delta}")
    if not 0 <= k_star < n_arms:
        raise BadSpecError(f"best arm {k_star} outside [0, {n_arms})")
    row = np.full(n_arms, 0.5 + delta / 2.0)
    row[k_star] = 0.5 - delta / 2.0
    means = np.tile(row, (n_agents, 1))
    if heterogeneous:
        amplitude = 0.5 * min(0.5 - delta / 2.0, 1.0 - (0.5 + delta / 2.0))
        signs = np.array([[(-1.0) ** (i + k) for k in range(n_arms)] for i in range(n_agents)])
        if n_agents % 2:
            signs[-1] = 0.0
        means = means + amplitude * signs
    return StochasticSpec(means=means, distribution=distribution, seed=seed, replay=replay)


@dataclass(frozen=True)
class AdversarialSpec:
    generator: AdversarialGenerator
    seed: int = 0
    replay: int = 0
    params: Dict[str, Any] = field(default_factory=dict)


def _bernoulli(rng: np.random.Generator, means: np.ndarray, horizon: int) -> np.ndarray:
    return (rng.random((horizon,) + means.shape) < means).astype(np.float64)


def _sample_stochastic(spec: StochasticSpec, horizon: int) -> np.ndarray:
    rng = make_environment_rng(spec.seed, spec.replay)
    mu = spec.means
    if spec.distribution == "bernoulli":
        return _bernoulli(rng, mu, horizon)
    # Beta(2 mu, 2 (1 - mu)); degenerate means stay constant.
    interior = (mu > 0.0) & (mu < 1.0)
    a = np.where(interior, 2.0 * mu, 1.0)
    b = np.where(interior, 2.0 * (1.0 - mu), 1.0)
    draws = rng.beta(a, b, size=(horizon,) + mu.shape)
    return np.where(interior, draws, mu)


def _piecewise_shift(rng, horizon, n_agents, n_arms, params) -> np.ndarray:
    """The best arm changes at every phase boundary."""
    phases = int(params.get("phases", 4))
    low, high = float(params.get("low", 0.2)), float(params.get("high", 0.8))
    phase_of_round = np.minimum(np.arange(horizon) * phases // horizon, phases - 1)
    means = np.full((horizon, n_agents, n_arms), high)
    means[np.arange(horizon), :, phase_of_round % n_arms] = low
    return (rng.random(means.shape) < means).astype(np.float64)


def _heterogeneous_bias(rng, horizon, n_agents, n_arms, params) -> np.ndarray:
    """Local best arms rotate across agents while arm 0 is best on the network average."""
    low, high = float(params.get("low", 0.2)), float(params.get("high", 0.8))
    tilt = float(params.get("tilt", 0.05))
    mid, spread = 0.5 * (low + high), 0.5 * (high - low)
    if spread <= tilt or mid - spread - tilt < 0.0:
        raise BadSpecError(f"heterogeneous bias needs tilt < (high - low)/2 and low >= tilt; got {params}")
    phase = 2.0 * math.pi * (np.arange(n_agents)[:, None] / n_agents + np.arange(n_arms)[None, :] / n_arms)
    means = mid + spread * np.cos(phase)
    means = means - means.mean(axis=0, keepdims=True) + mid
    means[:, 0] -= tilt
    return _bernoulli(rng, np.clip(means, 0.0, 1.0), horizon)


def _small_loss_regime(rng, horizon, n_agents, n_arms, params) -> np.ndarray:
    k_star = int(params.get("k_star", 0))
    if not 0 <= k_star < n_arms:
        raise BadSpecError(f"best arm {k_star} outside [0, {n_arms})")
    means = np.full((n_agents, n_arms), float(params.get("other_mean", 0.5)))
    means[:, k_star] = float(params.get("best_mean", 0.0))
    return _bernoulli(rng, means, horizon)


def _constant(rng, horizon, n_agents, n_arms, params) -> np.ndarray:
    arm_losses = params.get("arm_losses")
    if arm_losses is None:
        arm_losses = [0.0] * n_arms
    if len(arm_losses) != n_arms:
        raise BadSpecError(f"constant generator needs {n_arms} arm losses, got {len(arm_losses)}")
    return np.broadcast_to(np.asarray(arm_losses, dtype=np.float64), (horizon, n_agents, n_arms)).copy()


ADVERSARIAL_GENERATORS = {
    "iid_uniform": lambda rng, t, n, k, params: rng.random((t, n, k)),
    "piecewise_shift": _piecewise_shift,
    "heterogeneous_bias": _heterogeneous_bias,
    "small_loss_regime": _small_loss_regime,
    "constant": _constant,
}


def gen_kmab_losses(spec: AdversarialSpec | StochasticSpec, horizon: int, n_agents: int, n_arms: int) -> LossTensor:
    """Materialize the full (T, N, K) loss tensor."""
    if horizon < 1 or n_agents < 1 or n_arms < 2:
        raise BadSpecError(f"bad tensor shape T={horizon}, N={n_agents}, K={n_arms}")
    if isinstance(spec, StochasticSpec):
        if spec.means.shape != (n_agents, n_arms):
            raise BadSpecError(f"means have shape {spec.means.shape}, expected ({n_agents}, {n_arms})")
        values = _sample_stochastic(spec, horizon)
    else:
        builder = ADVERSARIAL_GENERATORS.get(spec.generator)
        if builder is None:
            raise BadSpecError(f"unknown generator '{spec.generator}'")
        values = builder(make_environment_rng(spec.seed, spec.replay), horizon, n_agents, n_arms, spec.params)
    tensor = LossTensor(values)
    logger.info(f"Generated {type(spec).__name__} losses: T={horizon}, N={n_agents}, K={n_arms}")
    return tensor


def best_fixed_arm(global_losses: np.ndarray) -> Tuple[int, float]:
    """(k*, L*) over a (T, K) table; ties go to the lowest index."""
    totals = [math.fsum(global_losses[:, k]) for k in range(global_losses.shape[1])]
    best = min(range(len(totals)), key=lambda k: (totals[k], k))
    return best, totals[best]


def cumulative_best_arm(tensor: LossTensor) -> Tuple[int, float]:
    """(k*, L*) for the network-average losses."""
    return best_fixed_arm(tensor.global_average())


# Linear environments


@dataclass(frozen=True)
class LinearEnvSpec:
    theta_generator: ThetaGenerator = "iid_gaussian_normalized"
    seed: int = 0
    replay: int = 0
    noise: float = 0.3
    period: int = 1000
    scale: float = 1.0


@dataclass(frozen=True)
class LinearEnvironment:
    """Loss coefficients theta_t(i) with the induced (T, N, K) losses in [-1, 1]."""

    thetas: np.ndarray = field(repr=False)
    losses: np.ndarray = field(repr=False)
    normalization: float

    @classmethod
    def from_thetas(cls, thetas: np.ndarray, omega: ActionSet) -> "LinearEnvironment":
        thetas = np.asarray(thetas, dtype=np.float64)
        if thetas.ndim != 3 or thetas.shape[2] != omega.ambient_dim:
            raise BadSpecError(f"thetas must be (T, N, {omega.ambient_dim}), got shape {thetas.shape}")
        losses = thetas @ omega.vectors.T
        peak = float(np.max(np.abs(losses))) if losses.size else 0.0
        factor = max(1.0, peak)
        if factor > 1.0:
            thetas = thetas / factor
            losses = np.clip(losses / factor, -1.0, 1.0)
        return cls(thetas=thetas, losses=losses, normalization=factor)

    @property
    def horizon(self) -> int:
        return self.losses.shape[0]

    def global_average(self) -> np.ndarray:
        return self.losses.mean(axis=1)


def gen_linear_thetas(spec: LinearEnvSpec, omega: ActionSet, horizon: int, n_agents: int) -> LinearEnvironment:
    """Draw theta_t(i) and rescale by one global factor so every |<theta, a_k>| <= 1."""
    rng = make_environment_rng(spec.seed, spec.replay)
    d = omega.ambient_dim
    direction = rng.standard_normal(d)
    direction /= np.linalg.norm(direction)
    noise = spec.noise * rng.standard_normal((horizon, n_agents, d))

    if spec.theta_generator == "iid_gaussian_normalized":
        base = np.broadcast_to(direction, (horizon, n_agents, d))
    elif spec.theta_generator == "rotating":
        angle = 2.0 * math.pi * np.arange(horizon) / spec.period
        base = np.zeros((horizon, n_agents, d))
        base[:, :, 0] = np.cos(angle)[:, None]
        if d > 1:
            base[:, :, 1] = np.sin(angle)[:, None]
    elif spec.theta_generator == "heterogeneous":
        local = rng.standard_normal((n_agents, d))
        local -= local.mean(axis=0, keepdims=True)
        base = np.broadcast_to(direction + local, (horizon, n_agents, d))
    else:
        raise BadSpecError(f"unknown theta generator '{spec.theta_generator}'")

    env = LinearEnvironment.from_thetas(spec.scale * (base + noise), omega)
    logger.info(f"Generated {spec.theta_generator} thetas: T={horizon}, N={n_agents}, normalization={env.normalization:.4f}")
    return env
