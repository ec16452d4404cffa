"""Distributed linear bandits: volumetric spanners, theta estimates and spanner-compressed gossip."""

import itertools
import logging
import math
from dataclasses import dataclass, field, replace
from math import comb
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel
from scipy import linalg

from .config import get_settings
from .errors import (
    BadSpecError,
    BoundViolationError,
    DimensionMismatchError,
    FloorViolationError,
    NotSPDError,
    RankDeficientError,
    RatesTooLargeError,
    SizeCapExceededError,
)
from .gossip import GossipParams
from .graph_topology import GossipMatrix
from .karmed import FLOOR_SLACK, AgentState, LockstepNetwork, make_agent_rng, query_base_policy, sample_arm
from .learners import DelayedWrapper, Regularizer

logger = logging.getLogger(__name__)

CERT_TOLERANCE = 1e-9
RESIDUAL_TOLERANCE = 1e-9
SOLVE_TOLERANCE = 1e-10


@dataclass(frozen=True)
class ActionSet:
    """K action vectors in R^d; linear algebra runs in an orthonormal basis of their span."""

    vectors: np.ndarray = field(repr=False)
    basis: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        v = np.array(self.vectors, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 2:
            raise BadSpecError(f"action set needs K >= 2 vectors, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise BadSpecError("action set has non-finite entries")
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)
        object.__setattr__(self, "basis", linalg.orth(v.T))

    @property
    def n_arms(self) -> int:
        return self.vectors.shape[0]

    @property
    def ambient_dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def effective_dim(self) -> int:
        return self.basis.shape[1]

    @property
    def reduced(self) -> np.ndarray:
        """(K, r) coordinates in the span basis."""
        return self.vectors @ self.basis

    def to_csv(self, path: str | Path) -> None:
        np.savetxt(path, self.vectors, delimiter=",", fmt="%.17g")

    @classmethod
    def from_csv(cls, path: str | Path) -> "ActionSet":
        return cls(np.loadtxt(path, delimiter=",", ndmin=2))


def random_action_set(n_arms: int, dim: int, seed: int = 0) -> ActionSet:
    """Gaussian directions normalized to the unit sphere."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 3])))
    v = rng.standard_normal((n_arms, dim))
    return ActionSet(v / np.linalg.norm(v, axis=1, keepdims=True))


class SpannerCertificate(BaseModel):
    max_quadratic_form: float
    spanner_constant: float
    reconstruction_residual: float
    certified: bool


@dataclass(frozen=True)
class VolumetricSpanner:
    member_indices: Tuple[int, ...]
    lam: np.ndarray = field(repr=False)
    spanner_constant: float
    reconstruction_residual: float
    certified: bool
    size_cap: int
    cap_exceeded: bool = False

    @property
    def size(self) -> int:
        return len(self.member_indices)

    @property
    def bound_scale(self) -> float:
        """1 for a certified spanner, c^2 otherwise."""
        return max(1.0, self.spanner_constant**2)

    @classmethod
    def from_members(cls, omega: ActionSet, members: Sequence[int], size_cap: Optional[int] = None) -> "VolumetricSpanner":
        members = tuple(int(m) for m in members)
        x = omega.reduced
        xs = x[list(members)]
        gram_inv = linalg.pinvh(xs.T @ xs)
        quad = np.einsum("ki,ij,kj->k", x, gram_inv, x)
        lam = x @ gram_inv @ xs.T
        residual = float(np.max(np.linalg.norm(lam @ omega.vectors[list(members)] - omega.vectors, axis=1)))
        constant = float(math.sqrt(max(0.0, float(np.max(quad)))))
        return cls(
            member_indices=members,
            lam=lam,
            spanner_constant=constant,
            reconstruction_residual=residual,
            certified=constant <= 1.0 + CERT_TOLERANCE and residual <= RESIDUAL_TOLERANCE,
            size_cap=size_cap if size_cap is not None else len(members),
        )

    def export(self, directory: str | Path) -> None:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        (out / "spanner_indices.txt").write_text("\n".join(str(i + 1) for i in self.member_indices) + "\n")
        np.savetxt(out / "spanner_lambda.csv", self.lam, delimiter=",", fmt="%.17g")


def _leverages(x: np.ndarray, members: List[int]) -> np.ndarray:
    xs = x[members]
    return np.einsum("ki,ij,kj->k", x, linalg.pinvh(xs.T @ xs), x)


def _max_volume_basis(x: np.ndarray, rank: int) -> List[int]:
    """Pivoted-QR start, then swaps while some point has a coefficient above 1."""
    _, _, pivots = linalg.qr(x.T, pivoting=True, mode="economic")
    members = [int(p) for p in pivots[:rank]]
    for _ in range(100 * x.shape[0]):
        coeffs = linalg.solve(x[members].T, x.T).T
        k, j = np.unravel_index(np.argmax(np.abs(coeffs)), coeffs.shape)
        if abs(coeffs[k, j]) <= 1.0 + CERT_TOLERANCE:
            break
        members[j] = int(k)
    return members


def _spans(x: np.ndarray, members: Sequence[int], rank: int) -> bool:
    return np.linalg.matrix_rank(x[list(members)]) == rank


def exhaustive_spanner_search(omega: ActionSet, size_cap: int) -> Optional[Tuple[int, ...]]:
    """Smallest certifying subset of size <= size_cap, or None."""
    x = omega.reduced
    rank = omega.effective_dim
    for size in range(max(rank, 1), min(size_cap, omega.n_arms) + 1):
        for members in itertools.combinations(range(omega.n_arms), size):
            if not _spans(x, members, rank):
                continue
            if np.max(_leverages(x, list(members))) <= 1.0 + CERT_TOLERANCE:
                return members
    return None


def _subset_count(n_arms: int, lo: int, hi: int) -> int:
    return sum(comb(n_arms, s) for s in range(lo, min(hi, n_arms) + 1))


def compute_spanner(
    omega: ActionSet,
    size_cap: Optional[int] = None,
    strict: bool = False,
    exhaustive_limit: Optional[int] = None,
) -> VolumetricSpanner:
    """Volumetric spanner: max-volume basis, greedy leverage additions, certification."""
    rank = omega.effective_dim
    if rank == 0 or np.unique(omega.vectors, axis=0).shape[0] == 1:
        raise RankDeficientError("action set collapses to a single point")
    cap = size_cap if size_cap is not None else 3 * rank
    x = omega.reduced

    members = _max_volume_basis(x, rank)
    while True:
        lev = _leverages(x, members)
        worst = int(np.argmax(lev))
        if lev[worst] <= 1.0 + CERT_TOLERANCE or len(members) >= cap:
            break
        members.append(worst)

    spanner = VolumetricSpanner.from_members(omega, sorted(members), cap)
    if not spanner.certified:
        limit = exhaustive_limit if exhaustive_limit is not None else get_settings().spanner_exhaustive_limit
        if _subset_count(omega.n_arms, rank, cap) <= limit:
            found = exhaustive_spanner_search(omega, cap)
            if found is not None:
                logger.info(f"Exhaustive search found a certified spanner of size {len(found)}")
                spanner = VolumetricSpanner.from_members(omega, found, cap)

    if not spanner.certified:
        if strict:
            raise SizeCapExceededError(f"no certified spanner within size {cap}")
        logger.warning(
            f"Spanner of size {spanner.size} is uncertified (c={spanner.spanner_constant:.4f}); bounds scale by c^2"
        )
        spanner = replace(spanner, cap_exceeded=True)
    logger.info(f"Spanner: |S|={spanner.size}, c={spanner.spanner_constant:.6f}, certified={spanner.certified}")
    return spanner


def spanner_certificate(s: VolumetricSpanner, omega: ActionSet) -> SpannerCertificate:
    """Recompute max_k a_k^T (S S^T)^+ a_k and minimum-norm coefficients in ambient coordinates."""
    v = omega.vectors
    vs = v[list(s.member_indices)]
    quad = np.einsum("ki,ij,kj->k", v, linalg.pinvh(vs.T @ vs), v)
    lam = v @ linalg.pinv(vs)
    residual = float(np.max(np.linalg.norm(lam @ vs - v, axis=1)))
    max_quad = float(np.max(quad))
    return SpannerCertificate(
        max_quadratic_form=max_quad,
        spanner_constant=float(np.max(np.linalg.norm(lam, axis=1))),
        reconstruction_residual=residual,
        certified=max_quad <= 1.0 + CERT_TOLERANCE and residual <= RESIDUAL_TOLERANCE,
    )


def mix_exploration_linear(p_prime: np.ndarray, alpha: float, beta: float, spanner: VolumetricSpanner) -> np.ndarray:
    """(1 - alpha - beta) p' + alpha/K + beta/|S| on spanner members."""
    if alpha + beta >= 1.0:
        raise RatesTooLargeError(f"alpha + beta = {alpha + beta} must stay below 1")
    p_prime = np.asarray(p_prime, dtype=np.float64)
    policy = (1.0 - alpha - beta) * p_prime + alpha / p_prime.size
    policy[list(spanner.member_indices)] += beta / spanner.size
    return policy


@dataclass(frozen=True)
class SpdFactor:
    matrix: np.ndarray = field(repr=False)
    cho: Tuple[np.ndarray, bool] = field(repr=False)


def factorize_spd(m: np.ndarray) -> SpdFactor:
    """Cholesky factor, retrying once with jitter 1e-12 * trace / d."""
    try:
        return SpdFactor(m, linalg.cho_factor(m))
    except linalg.LinAlgError:
        jittered = m + 1e-12 * np.trace(m) / m.shape[0] * np.eye(m.shape[0])
        try:
            factor = SpdFactor(jittered, linalg.cho_factor(jittered))
        except linalg.LinAlgError as e:
            raise NotSPDError("correlation matrix is not positive definite") from e
        logger.warning("Correlation matrix needed jitter to factorize")
        return factor


def correlation_matrix(policy: np.ndarray, reduced_actions: np.ndarray) -> np.ndarray:
    """M = sum_j p(j) a_j a_j^T."""
    return (reduced_actions * policy[:, None]).T @ reduced_actions


def theta_hat(m_factorized: SpdFactor, played_vector: np.ndarray, realized_loss: float) -> np.ndarray:
    """Solve M x = a * loss through the Cholesky factor."""
    rhs = np.asarray(played_vector, dtype=np.float64) * realized_loss
    x = linalg.cho_solve(m_factorized.cho, rhs)
    residual = np.linalg.norm(m_factorized.matrix @ x - rhs)
    if residual > SOLVE_TOLERANCE * max(np.linalg.norm(played_vector), np.finfo(float).tiny):
        raise NotSPDError(f"theta solve residual {residual:.3e} too large")
    return x


def project_spanner_losses(theta: np.ndarray, spanner_vectors: np.ndarray, bound: Optional[float] = None) -> np.ndarray:
    """<b_k, theta> for every spanner member."""
    losses = spanner_vectors @ theta
    if bound is not None and losses.size and np.max(np.abs(losses)) > bound * (1.0 + CERT_TOLERANCE):
        raise BoundViolationError(f"spanner loss {np.max(np.abs(losses)):.4g} exceeds |S|/beta = {bound:.4g}")
    return losses


def reconstruct_losses(z: np.ndarray, spanner: VolumetricSpanner) -> np.ndarray:
    """z_tilde(k) = <lambda_k, z>."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (spanner.size,):
        raise DimensionMismatchError(f"expected {spanner.size} spanner coordinates, got {z.shape}")
    return spanner.lam @ z


def linear_rates(n_arms: int, horizon: int, n_agents: int, block_len: int, dim: int) -> Tuple[float, float]:
    """eta = min(1/(6Bd), sqrt(log K / (dTB + dT/N))) and beta = 3Bd eta."""
    eta = min(
        1.0 / (6.0 * block_len * dim),
        math.sqrt(math.log(n_arms) / (dim * horizon * block_len + dim * horizon / n_agents)),
    )
    return eta, 3.0 * block_len * dim * eta


def spanner_consensus_bound(n_arms: int, horizon: int) -> float:
    return 2.0 / (horizon**2 * float(n_arms) ** 3)


def reconstructed_consensus_bound(n_arms: int, horizon: int) -> float:
    return 1.0 / (float(n_arms) ** 1.5 * horizon**2)


@dataclass
class LinearAgentState(AgentState):
    reduced_actions: Optional[np.ndarray] = field(default=None, repr=False)
    spanner: Optional[VolumetricSpanner] = None
    beta: float = 0.0
    factor: Optional[SpdFactor] = field(default=None, repr=False)
    max_estimate: float = 0.0

    @property
    def estimate_dim(self) -> int:
        return self.spanner.size

    @property
    def estimate_bound(self) -> float:
        if self.beta <= 0.0:
            return math.inf
        return self.spanner.bound_scale * self.spanner.size / self.beta


def begin_linear_block(state: LinearAgentState, tau: int) -> None:
    p_prime = query_base_policy(state, tau)
    policy = mix_exploration_linear(p_prime, state.alpha, state.beta, state.spanner)
    if np.min(policy) < state.floor * (1.0 - FLOOR_SLACK):
        raise FloorViolationError(f"agent {state.agent_id} block {tau}: exploration floor broken")
    state.factor = factorize_spd(correlation_matrix(policy, state.reduced_actions))
    state.policy_block = policy
    state.cdf = np.cumsum(policy)
    state.block_index = tau
    state.rounds_in_block = 0
    if state.estimate_accumulator is None:
        state.estimate_accumulator = np.zeros(state.estimate_dim)


def linear_agent_round(state: LinearAgentState, losses_for_round: np.ndarray, round_in_block: int) -> int:
    """Play, estimate theta, check every arm's estimated loss, accumulate spanner losses."""
    if round_in_block != state.rounds_in_block:
        raise DimensionMismatchError(f"agent {state.agent_id} expected round {state.rounds_in_block}, got {round_in_block}")
    arm = sample_arm(state.cdf, state.rng.random())
    theta = theta_hat(state.factor, state.reduced_actions[arm], float(losses_for_round[arm]))
    bound = state.estimate_bound
    arm_losses = np.abs(state.reduced_actions @ theta)
    worst = float(np.max(arm_losses))
    if worst > bound * (1.0 + CERT_TOLERANCE):
        raise BoundViolationError(f"agent {state.agent_id}: |<a_k, theta_hat>| = {worst:.4g} exceeds {bound:.4g}")
    state.max_estimate = max(state.max_estimate, worst)
    members = list(state.spanner.member_indices)
    state.estimate_accumulator += project_spanner_losses(theta, state.reduced_actions[members], bound)
    state.rounds_in_block += 1
    return arm


class LinearNetwork(LockstepNetwork):
    def _begin(self, agent: LinearAgentState, tau: int) -> None:
        begin_linear_block(agent, tau)

    def _round(self, agent: LinearAgentState, losses_for_round: np.ndarray, r: int) -> int:
        return linear_agent_round(agent, losses_for_round, r)

    @property
    def max_estimate(self) -> float:
        return max(a.max_estimate for a in self.agents)


def build_linear_network(
    w: GossipMatrix,
    params: GossipParams,
    reg: Regularizer,
    omega: ActionSet,
    spanner: VolumetricSpanner,
    beta: float,
    horizon: int,
    master_seed: int,
    seed_index: int,
    uniform_policy: bool = False,
) -> LinearNetwork:
    reduced = omega.reduced
    agents = [
        LinearAgentState(
            agent_id=i,
            n_arms=omega.n_arms,
            horizon=horizon,
            wrapper=DelayedWrapper.create(reg, omega.n_arms, feedback_map=spanner.lam),
            rng=make_agent_rng(master_seed, seed_index, i),
            uniform_policy=uniform_policy,
            reduced_actions=reduced,
            spanner=spanner,
            beta=beta,
        )
        for i in range(w.n_agents)
    ]
    return LinearNetwork(agents, w, params, spanner.size)
