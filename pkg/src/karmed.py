"""Block-based K-armed protocol: exploration mixing, sampling, IPW estimates, gossip, delayed feedback."""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from .errors import BadSpecError, BoundViolationError, DimensionMismatchError, FloorViolationError
from .gossip import GossipBuffer, GossipParams, consensus_error, gossip_step
from .graph_topology import GossipMatrix
from .learners import DelayedWrapper, Regularizer, bold_feed, bold_query

logger = logging.getLogger(__name__)

FLOOR_SLACK = 1e-12
AGENT_STREAM = 1


@dataclass(frozen=True)
class LossTensor:
    """Oblivious losses, shape (T, N, K), every entry in [0, 1]."""

    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 3:
            raise BadSpecError(f"loss tensor must be (T, N, K), got shape {v.shape}")
        if v.size and (np.min(v) < 0.0 or np.max(v) > 1.0 or not np.all(np.isfinite(v))):
            raise BadSpecError("loss tensor has entries outside [0, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def horizon(self) -> int:
        return self.values.shape[0]

    @property
    def n_agents(self) -> int:
        return self.values.shape[1]

    @property
    def n_arms(self) -> int:
        return self.values.shape[2]

    def global_average(self) -> np.ndarray:
        """(T, K) network-average losses."""
        return self.values.mean(axis=1)

    def to_csv(self, path: str | Path) -> None:
        t_idx, i_idx, k_idx = np.indices(self.values.shape)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow([self.horizon, self.n_agents, self.n_arms])
            writer.writerow(["t", "i", "k", "value"])
            for t, i, k, value in zip(t_idx.ravel(), i_idx.ravel(), k_idx.ravel(), self.values.ravel()):
                writer.writerow([t + 1, i + 1, k + 1, f"{value:.17g}"])

    @classmethod
    def from_csv(cls, path: str | Path) -> "LossTensor":
        with open(path, newline="") as f:
            reader = csv.reader(f)
            horizon, n_agents, n_arms = (int(x) for x in next(reader))
            next(reader)
            values = np.full((horizon, n_agents, n_arms), np.nan)
            for t, i, k, value in reader:
                values[int(t) - 1, int(i) - 1, int(k) - 1] = float(value)
        if np.isnan(values).any():
            raise BadSpecError(f"loss table {path} is incomplete")
        return cls(values)

    def to_npy(self, path: str | Path) -> None:
        np.save(path, self.values)

    @classmethod
    def from_npy(cls, path: str | Path) -> "LossTensor":
        return cls(np.load(path))


def make_agent_rng(master_seed: int, seed_index: int, agent_id: int) -> np.random.Generator:
    """Counter-based stream keyed by (master_seed, replay, agent)."""
    key = np.random.SeedSequence([master_seed, AGENT_STREAM, seed_index, agent_id])
    return np.random.Generator(np.random.Philox(key))


def mix_exploration(p_prime: np.ndarray, alpha: float, n_arms: int) -> np.ndarray:
    """(1 - alpha) p' + alpha/K."""
    return (1.0 - alpha) * np.asarray(p_prime, dtype=np.float64) + alpha / n_arms


def ipw_estimate(realized_loss: float, policy: np.ndarray, played_arm: int, floor: float) -> np.ndarray:
    """Importance-weighted estimate with a single nonzero coordinate."""
    prob = policy[played_arm]
    if prob < floor * (1.0 - FLOOR_SLACK):
        raise FloorViolationError(f"arm {played_arm} has probability {prob} below the floor {floor}")
    estimate = np.zeros(policy.size)
    estimate[played_arm] = realized_loss / prob
    return estimate


def sample_arm(cdf: np.ndarray, u: float) -> int:
    """Inverse-CDF draw."""
    return min(int(np.searchsorted(cdf, u, side="right")), cdf.size - 1)


@dataclass
class AgentState:
    """One agent's view of the block protocol."""

    agent_id: int
    n_arms: int
    horizon: int
    wrapper: DelayedWrapper
    rng: np.random.Generator = field(repr=False)
    uniform_policy: bool = False
    base_policy: Optional[np.ndarray] = None
    policy_block: Optional[np.ndarray] = None
    estimate_accumulator: Optional[np.ndarray] = None
    block_index: int = 0
    rounds_in_block: int = 0
    cdf: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def alpha(self) -> float:
        return 1.0 / self.horizon

    @property
    def floor(self) -> float:
        return self.alpha / self.n_arms

    @property
    def estimate_dim(self) -> int:
        return self.n_arms


def _set_policy(state: AgentState, tau: int, policy: np.ndarray) -> None:
    if np.min(policy) < state.floor * (1.0 - FLOOR_SLACK):
        raise FloorViolationError(f"agent {state.agent_id} block {tau}: exploration floor broken")
    state.policy_block = policy
    state.cdf = np.cumsum(policy)
    state.block_index = tau
    state.rounds_in_block = 0
    if state.estimate_accumulator is None:
        state.estimate_accumulator = np.zeros(state.estimate_dim)


def query_base_policy(state: AgentState, tau: int) -> np.ndarray:
    p_prime = bold_query(state.wrapper, tau)
    if state.uniform_policy:
        p_prime = np.full(state.n_arms, 1.0 / state.n_arms)
    state.base_policy = p_prime
    return p_prime


def begin_block(state: AgentState, tau: int) -> None:
    """Query the delayed learner for block tau and mix in exploration."""
    p_prime = query_base_policy(state, tau)
    _set_policy(state, tau, mix_exploration(p_prime, state.alpha, state.n_arms))


def agent_round(state: AgentState, losses_for_round: np.ndarray, round_in_block: int) -> int:
    """Play once from the frozen block policy and accumulate the IPW estimate.

    The gossip step on the previous block's buffer happens in the executor,
    after every agent has played (lockstep barrier).
    """
    if round_in_block != state.rounds_in_block:
        raise DimensionMismatchError(f"agent {state.agent_id} expected round {state.rounds_in_block}, got {round_in_block}")
    arm = sample_arm(state.cdf, state.rng.random())
    estimate = ipw_estimate(float(losses_for_round[arm]), state.policy_block, arm, state.floor)
    if estimate[arm] > state.n_arms * state.horizon * (1.0 + FLOOR_SLACK):
        raise BoundViolationError(f"estimate {estimate[arm]} exceeds KT")
    state.estimate_accumulator += estimate
    state.rounds_in_block += 1
    return arm


def commit_block(state: AgentState, tau: int, gossip_output: np.ndarray) -> np.ndarray:
    """Close block tau: send the gossiped estimate of block tau-1 and hand back this block's sum.

    Returns the vector that seeds the next gossip buffer (prev = curr = sum).
    The executor opens block tau+1 afterwards.
    """
    if tau >= 2:
        bold_feed(state.wrapper, tau - 1, gossip_output)
    seed = state.estimate_accumulator.copy()
    state.estimate_accumulator = np.zeros(state.estimate_dim)
    return seed


@dataclass
class BlockOutcome:
    tau: int
    policies: np.ndarray
    consensus_error: float
    exact_mean: np.ndarray
    estimates: np.ndarray
    actions: np.ndarray


class LockstepNetwork:
    """Sequential reference executor: every agent plays, then one gossip step."""

    def __init__(self, agents: List[AgentState], w: GossipMatrix, params: GossipParams, dim: int):
        if len(agents) != w.n_agents:
            raise DimensionMismatchError(f"{len(agents)} agents but W is {w.n_agents}x{w.n_agents}")
        self.agents = agents
        self.w = w
        self.params = params
        self.dim = dim
        self.buffer = GossipBuffer.initialize(np.zeros((len(agents), dim)))
        self.exact_mean = np.zeros(dim)
        self.degrees = w.source_graph.degrees
        self.messages_sent = np.zeros(len(agents), dtype=np.int64)
        self.floats_sent = np.zeros(len(agents), dtype=np.int64)
        for agent in agents:
            self._begin(agent, 1)

    def _begin(self, agent: AgentState, tau: int) -> None:
        begin_block(agent, tau)

    def _round(self, agent: AgentState, losses_for_round: np.ndarray, r: int) -> int:
        return agent_round(agent, losses_for_round, r)

    def _commit(self, agent: AgentState, tau: int, last: bool) -> np.ndarray:
        seed = commit_block(agent, tau, self.buffer.curr[agent.agent_id].copy())
        if not last:
            self._begin(agent, tau + 1)
        return seed

    def play_block(self, tau: int, losses: np.ndarray, last: bool = False) -> BlockOutcome:
        """Run one block; `losses` has shape (B, N, K)."""
        policies = np.stack([a.policy_block for a in self.agents])
        actions = np.zeros((losses.shape[0], len(self.agents)), dtype=np.int64)
        for r in range(losses.shape[0]):
            for agent in self.agents:
                actions[r, agent.agent_id] = self._round(agent, losses[r, agent.agent_id], r)
            self.buffer = gossip_step(self.buffer, self.w, self.params.kappa)
            self.messages_sent += self.degrees
            self.floats_sent += self.degrees * self.dim

        outcome = BlockOutcome(
            tau=tau,
            policies=policies,
            consensus_error=consensus_error(self.buffer),
            exact_mean=self.exact_mean,
            estimates=self.buffer.curr.copy(),
            actions=actions,
        )
        seeds = np.stack([self._commit(agent, tau, last) for agent in self.agents])
        self.buffer = GossipBuffer.initialize(seeds)
        self.exact_mean = seeds.mean(axis=0)
        logger.debug(f"Block {tau}: consensus error {outcome.consensus_error:.3e}")
        return outcome


def build_karmed_network(
    w: GossipMatrix,
    params: GossipParams,
    reg: Regularizer,
    n_arms: int,
    horizon: int,
    master_seed: int,
    seed_index: int,
    uniform_policy: bool = False,
) -> LockstepNetwork:
    agents = [
        AgentState(
            agent_id=i,
            n_arms=n_arms,
            horizon=horizon,
            wrapper=DelayedWrapper.create(reg, n_arms),
            rng=make_agent_rng(master_seed, seed_index, i),
            uniform_policy=uniform_policy,
        )
        for i in range(w.n_agents)
    ]
    return LockstepNetwork(agents, w, params, n_arms)
