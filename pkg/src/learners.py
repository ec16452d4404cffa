"""FTRL over the probability simplex and the two-instance delayed-feedback wrapper.

Three potentials are supported:

* negative entropy, solved in closed form (exponential weights);
* entropy + log-barrier (small-loss tuning);
* entropy + Tsallis-1/2 (best-of-both-worlds tuning), with block-indexed rates.

The hybrids are solved through the Lagrange multiplier ``nu`` of the sum-to-one
constraint. For fixed ``nu`` each coordinate solves the scalar equation
``h(u_k) = -L_k - nu`` in ``u_k = log q_k``, where
``h(u) = (u + 1)/eta + barrier'(e^u)`` is increasing and concave. Newton started
from a point left of the root therefore climbs monotonically onto it. The outer
multiplier is found with Brent's bracketed method.
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Set, Tuple

import numpy as np
from scipy import optimize, special

from .errors import (
    DimensionMismatchError,
    DuplicateFeedbackError,
    MissingLStarError,
    OutOfRangeError,
    ProtocolOrderError,
    SolverDivergedError,
)

logger = logging.getLogger(__name__)

NEWTON_MAX_ITER = 200
NEWTON_TOL = 1e-14


class Theorem(str, Enum):
    WORST_CASE = "worst_case"
    SMALL_LOSS = "small_loss"
    BOBW = "bobw"


# Rate schedules


@dataclass(frozen=True)
class Constant:
    value: float

    def __call__(self, t: int) -> float:
        return self.value


@dataclass(frozen=True)
class BobwEta:
    """eta_t = min(1/B, sqrt(log K / (t B^2)))."""

    block_len: int
    n_arms: int

    def __call__(self, t: int) -> float:
        return min(1.0 / self.block_len, math.sqrt(math.log(self.n_arms) / (t * self.block_len**2)))


@dataclass(frozen=True)
class BobwGamma:
    """gamma_t = sqrt(N / (t B))."""

    block_len: int
    n_agents: int

    def __call__(self, t: int) -> float:
        return math.sqrt(self.n_agents / (t * self.block_len))


# Regularizers


class Regularizer(ABC):
    """FTRL potential with its learning-rate schedule, indexed by block."""

    @abstractmethod
    def rates(self, t: int) -> Tuple[float, Optional[float]]:
        """(eta_t, gamma_t); gamma is None for pure entropy."""

    def value(self, q: np.ndarray, t: int = 1) -> float:
        eta, _ = self.rates(t)
        return float(np.sum(special.xlogy(q, q)) / eta + self.barrier_value(q, t))

    def barrier_value(self, q: np.ndarray, t: int) -> float:
        return 0.0

    def _checked(self, eta: float, gamma: Optional[float]) -> Tuple[float, Optional[float]]:
        if not eta > 0.0 or (gamma is not None and not gamma > 0.0):
            raise OutOfRangeError(f"learning rates must be positive, got eta={eta}, gamma={gamma}")
        return eta, gamma


@dataclass(frozen=True)
class NegEntropy(Regularizer):
    eta: float

    def __post_init__(self):
        self._checked(self.eta, None)

    def rates(self, t: int) -> Tuple[float, Optional[float]]:
        return self.eta, None


class HybridRegularizer(Regularizer):
    """Entropy plus a barrier term, solved numerically."""

    # Barrier in log-coordinates: g(u) = d/dq barrier at q = e^u, and g'(u).
    @abstractmethod
    def grad_u(self, u: np.ndarray, gamma: float) -> np.ndarray: ...

    @abstractmethod
    def grad_u_prime(self, u: np.ndarray, gamma: float) -> np.ndarray: ...

    @abstractmethod
    def grad_u_inverse(self, y: np.ndarray, gamma: float) -> np.ndarray:
        """Solve g(u) = y for y < 0."""


@dataclass(frozen=True)
class EntropyLogBarrier(HybridRegularizer):
    eta: float
    gamma: float

    def __post_init__(self):
        self._checked(self.eta, self.gamma)

    def rates(self, t: int) -> Tuple[float, Optional[float]]:
        return self.eta, self.gamma

    def barrier_value(self, q: np.ndarray, t: int) -> float:
        with np.errstate(divide="ignore"):
            return float(-np.sum(np.log(q)) / self.gamma)

    def grad_u(self, u, gamma):
        return -np.exp(-u) / gamma

    def grad_u_prime(self, u, gamma):
        return np.exp(-u) / gamma

    def grad_u_inverse(self, y, gamma):
        return -np.log(-gamma * y)


@dataclass(frozen=True)
class EntropyTsallis(HybridRegularizer):
    eta_schedule: Callable[[int], float]
    gamma_schedule: Callable[[int], float]

    def rates(self, t: int) -> Tuple[float, Optional[float]]:
        return self._checked(self.eta_schedule(t), self.gamma_schedule(t))

    def barrier_value(self, q: np.ndarray, t: int) -> float:
        _, gamma = self.rates(t)
        return float(-2.0 * np.sum(np.sqrt(q)) / gamma)

    def grad_u(self, u, gamma):
        return -np.exp(-0.5 * u) / gamma

    def grad_u_prime(self, u, gamma):
        return 0.5 * np.exp(-0.5 * u) / gamma

    def grad_u_inverse(self, y, gamma):
        return -2.0 * np.log(-gamma * y)


def objective(cum_loss: np.ndarray, q: np.ndarray, reg: Regularizer, t: int = 1) -> float:
    """<L, q> + psi_t(q)."""
    return float(np.dot(cum_loss, q)) + reg.value(q, t)


# Solvers


def solve_entropy(cum_loss: np.ndarray, eta: float) -> np.ndarray:
    """Exponential weights: q = exp(-eta L - logsumexp(-eta L))."""
    if not eta > 0.0:
        raise OutOfRangeError(f"eta must be positive, got {eta}")
    scores = -eta * np.asarray(cum_loss, dtype=np.float64)
    return np.exp(scores - special.logsumexp(scores))


def _solve_coordinates(c: np.ndarray, eta: float, gamma: float, reg: HybridRegularizer) -> np.ndarray:
    """Vectorized safeguarded Newton for h(u_k) = c_k, returns u."""
    inv_eta = 1.0 / eta
    lo = eta * c - 1.0
    slack = inv_eta - c
    has_barrier_bound = slack > 0.0
    if np.any(has_barrier_bound):
        lo_barrier = np.minimum(0.0, reg.grad_u_inverse(-slack[has_barrier_bound], gamma))
        lo[has_barrier_bound] = np.maximum(lo[has_barrier_bound], lo_barrier)

    u = lo
    for _ in range(NEWTON_MAX_ITER):
        residual = c - (inv_eta * (u + 1.0) + reg.grad_u(u, gamma))
        step = residual / (inv_eta + reg.grad_u_prime(u, gamma))
        u = np.maximum(u + step, lo)
        if np.all(np.abs(step) <= NEWTON_TOL * np.maximum(1.0, np.abs(u))):
            return u
    raise SolverDivergedError(f"coordinate Newton did not converge in {NEWTON_MAX_ITER} steps")


def solve_simplex_hybrid(cum_loss: np.ndarray, reg: HybridRegularizer, t: int = 1) -> np.ndarray:
    """argmin over the simplex of <L, q> + psi_t(q) for a hybrid potential."""
    if not isinstance(reg, HybridRegularizer):
        raise OutOfRangeError(f"{type(reg).__name__} is not a hybrid regularizer")
    eta, gamma = reg.rates(t)
    losses = np.asarray(cum_loss, dtype=np.float64)
    losses = losses - losses.min()
    k = losses.size

    def h(u: float) -> float:
        return float((u + 1.0) / eta + reg.grad_u(np.array([u]), gamma)[0])

    def mass_gap(nu: float) -> float:
        return float(np.sum(np.exp(_solve_coordinates(-losses - nu, eta, gamma, reg)))) - 1.0

    # Smallest-loss coordinate at u = 1 gives mass > 1; at u = -log K - 1 every coordinate is below 1/(eK).
    nu_lo = -h(1.0)
    nu_hi = -h(-math.log(k) - 1.0)
    try:
        nu = optimize.brentq(mass_gap, nu_lo, nu_hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=NEWTON_MAX_ITER)
    except (RuntimeError, ValueError) as e:
        raise SolverDivergedError(f"multiplier search failed: {e}") from e

    q = np.exp(_solve_coordinates(-losses - nu, eta, gamma, reg))
    return q / q.sum()


def kkt_residual(cum_loss: np.ndarray, q: np.ndarray, reg: Regularizer, t: int = 1) -> float:
    """Max of |sum q - 1| and the q-weighted stationarity spread."""
    eta, gamma = reg.rates(t)
    u = np.log(q)
    grad = np.asarray(cum_loss, dtype=np.float64) + (u + 1.0) / eta
    if isinstance(reg, HybridRegularizer):
        grad = grad + reg.grad_u(u, gamma)
    nu = float(np.dot(q, grad))
    return max(abs(float(q.sum()) - 1.0), float(np.max(q * np.abs(grad - nu))))


# FTRL state and the delayed wrapper


@dataclass
class FtrlState:
    """Cumulative feedback of one FTRL instance.

    With `feedback_map` set (shape K x m), incoming m-vectors are reconstructed
    into K-vectors before accumulation.
    """

    reg: Regularizer
    cum_loss: np.ndarray
    feedback_count: int = 0
    last_feedback_block: int = 0
    feedback_map: Optional[np.ndarray] = field(default=None, repr=False)

    @classmethod
    def create(cls, reg: Regularizer, n_arms: int, feedback_map: Optional[np.ndarray] = None) -> "FtrlState":
        return cls(reg=reg, cum_loss=np.zeros(n_arms), feedback_map=feedback_map)

    @property
    def n_arms(self) -> int:
        return self.cum_loss.size

    @property
    def rate_index(self) -> int:
        return max(1, self.last_feedback_block)

    def feed(self, z: np.ndarray, block_index: int) -> None:
        z = np.asarray(z, dtype=np.float64)
        if self.feedback_map is not None:
            if z.shape != (self.feedback_map.shape[1],):
                raise DimensionMismatchError(f"expected {self.feedback_map.shape[1]} spanner coordinates, got {z.shape}")
            z = self.feedback_map @ z
        elif z.shape != self.cum_loss.shape:
            raise DimensionMismatchError(f"expected {self.n_arms} losses, got {z.shape}")
        if not np.all(np.isfinite(z)):
            raise OutOfRangeError("feedback has non-finite entries")
        self.cum_loss = self.cum_loss + z
        self.feedback_count += 1
        self.last_feedback_block = block_index


def ftrl_next(state: FtrlState) -> np.ndarray:
    """Next FTRL distribution of the instance."""
    if isinstance(state.reg, NegEntropy):
        return solve_entropy(state.cum_loss, state.reg.eta)
    return solve_simplex_hybrid(state.cum_loss, state.reg, state.rate_index)


@dataclass
class DelayedWrapper:
    """Two FTRL instances alternating over odd and even blocks."""

    instance_even: FtrlState
    instance_odd: FtrlState
    last_queried_block: int = 0
    fed_blocks: Set[int] = field(default_factory=set)

    @classmethod
    def create(cls, reg: Regularizer, n_arms: int, feedback_map: Optional[np.ndarray] = None) -> "DelayedWrapper":
        return cls(
            instance_even=FtrlState.create(reg, n_arms, feedback_map),
            instance_odd=FtrlState.create(reg, n_arms, feedback_map),
        )

    def instance_for(self, block_index: int) -> FtrlState:
        return self.instance_odd if block_index % 2 else self.instance_even


def bold_query(wrapper: DelayedWrapper, tau: int) -> np.ndarray:
    """Policy for block tau from instance (tau mod 2)."""
    if tau != wrapper.last_queried_block + 1:
        raise ProtocolOrderError(f"queried block {tau} after block {wrapper.last_queried_block}")
    q = ftrl_next(wrapper.instance_for(tau))
    wrapper.last_queried_block = tau
    return q


def bold_feed(wrapper: DelayedWrapper, block_index: int, z: np.ndarray) -> None:
    """Route the gossiped estimate of `block_index` to instance (block_index mod 2)."""
    if block_index in wrapper.fed_blocks:
        raise DuplicateFeedbackError(f"block {block_index} already fed")
    if block_index != wrapper.last_queried_block - 1:
        raise ProtocolOrderError(
            f"feedback for block {block_index} arrived while block {wrapper.last_queried_block} is active"
        )
    wrapper.instance_for(block_index).feed(z, block_index)
    wrapper.fed_blocks.add(block_index)


def tune_rates(
    theorem: Theorem | str,
    n_arms: int,
    horizon: int,
    n_agents: int,
    block_len: int,
    l_star: Optional[float] = None,
) -> Regularizer:
    """Learning rates from the regret theorems (natural logarithms throughout)."""
    theorem = Theorem(theorem)
    log_k = math.log(n_arms)

    if theorem is Theorem.WORST_CASE:
        eta = math.sqrt(log_k / (2.0 * (block_len + 3.0 * n_arms / n_agents) * horizon))
        return NegEntropy(eta=eta)

    if theorem is Theorem.SMALL_LOSS:
        if l_star is None:
            raise MissingLStarError("small-loss tuning needs L*")
        eta_tail = math.sqrt(log_k / (block_len * l_star)) if l_star > 0 else math.inf
        gamma_tail = math.sqrt(n_arms * n_agents * math.log(horizon) / l_star) if l_star > 0 else math.inf
        return EntropyLogBarrier(eta=min(1.0 / (4.0 * block_len), eta_tail), gamma=min(n_agents / 12.0, gamma_tail))

    return EntropyTsallis(
        eta_schedule=BobwEta(block_len, n_arms),
        gamma_schedule=BobwGamma(block_len, n_agents),
    )
