"""Accelerated gossip: mixing coefficient, block length and the iteration itself."""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DimensionMismatchError, OutOfRangeError
from .graph_topology import GossipMatrix

logger = logging.getLogger(__name__)

DECAY_CONSTANT = 1.0 - 1.0 / math.sqrt(2.0)


@dataclass(frozen=True)
class GossipParams:
    kappa: float
    block_len_b: int
    sigma2: float
    overridden: bool = False
    exceeds_horizon: bool = False


@dataclass(frozen=True)
class GossipBuffer:
    """Two most recent iterates for every agent, shape (N, dim)."""

    prev: np.ndarray = field(repr=False)
    curr: np.ndarray = field(repr=False)
    step_index: int = 0

    @classmethod
    def initialize(cls, values: np.ndarray) -> "GossipBuffer":
        values = np.array(values, dtype=np.float64)
        if values.ndim != 2:
            raise DimensionMismatchError(f"expected (N, dim) values, got shape {values.shape}")
        return cls(prev=values.copy(), curr=values.copy(), step_index=0)

    @property
    def n_agents(self) -> int:
        return self.curr.shape[0]

    @property
    def dim(self) -> int:
        return self.curr.shape[1]

    def mean(self) -> np.ndarray:
        return self.curr.mean(axis=0)


def _check_sigma2(sigma2: float) -> None:
    if not 0.0 <= sigma2 < 1.0:
        raise OutOfRangeError(f"sigma2 must lie in [0, 1), got {sigma2}")


def mixing_coefficient(sigma2: float) -> float:
    """kappa = 1 / (1 + sqrt(1 - sigma2^2))."""
    _check_sigma2(sigma2)
    return 1.0 / (1.0 + math.sqrt(1.0 - sigma2 * sigma2))


def block_length(
    n_arms: int,
    horizon: int,
    n_agents: int,
    sigma2: float,
    override: Optional[int] = None,
    kappa: Optional[float] = None,
) -> GossipParams:
    """Block length B and mixing coefficient kappa for the given network."""
    if n_arms < 2 or horizon < 3 or n_agents < 2:
        raise OutOfRangeError(f"need K >= 2, T >= 3, N >= 2; got K={n_arms}, T={horizon}, N={n_agents}")
    _check_sigma2(sigma2)

    if override is not None:
        b = int(override)
        if b < 1:
            raise OutOfRangeError(f"block length must be at least 1, got {b}")
    else:
        kt = float(n_arms) * float(horizon)
        numerator = 6.0 * math.log(kt) + 0.5 * math.log(14.0 * n_agents)
        b = math.ceil(numerator / (DECAY_CONSTANT * math.sqrt(1.0 - sigma2)))

    k = mixing_coefficient(sigma2) if kappa is None else float(kappa)
    exceeds = b > horizon
    if exceeds:
        logger.warning(f"Block length B={b} exceeds horizon T={horizon}")
    return GossipParams(
        kappa=k, block_len_b=b, sigma2=sigma2, overridden=override is not None, exceeds_horizon=exceeds
    )


def gossip_step(buf: GossipBuffer, w: GossipMatrix, kappa: float) -> GossipBuffer:
    """x^{b+1} = (1 + kappa) W x^b - kappa x^{b-1} for every agent at once."""
    if buf.prev.shape != buf.curr.shape:
        raise DimensionMismatchError(f"buffer halves differ: {buf.prev.shape} vs {buf.curr.shape}")
    if w.n_agents != buf.n_agents:
        raise DimensionMismatchError(f"W is {w.n_agents}x{w.n_agents} but buffer holds {buf.n_agents} agents")
    nxt = (1.0 + kappa) * (w.weights @ buf.curr) - kappa * buf.prev
    return GossipBuffer(prev=buf.curr, curr=nxt, step_index=buf.step_index + 1)


def run_block_gossip(buf: GossipBuffer, w: GossipMatrix, params: GossipParams) -> GossipBuffer:
    for _ in range(params.block_len_b):
        buf = gossip_step(buf, w, params.kappa)
    return buf


def consensus_error(buf: GossipBuffer) -> float:
    """max_i ||x(i) - mean||_2 over the current iterate."""
    if buf.n_agents == 0:
        return 0.0
    return float(np.max(np.linalg.norm(buf.curr - buf.mean(), axis=1)))


def frobenius_gap(buf: GossipBuffer) -> float:
    return float(np.linalg.norm(buf.curr - buf.mean()))


def acceleration_bound(sigma2: float, steps: int) -> float:
    """Contraction factor of the Frobenius gap after `steps` accelerated rounds."""
    return math.sqrt(14.0) * (1.0 - DECAY_CONSTANT * math.sqrt(1.0 - sigma2)) ** steps


def consensus_bound(n_arms: int, horizon: int, block_len: int) -> float:
    """2B / (KT)^5, the end-of-block consensus guarantee."""
    return 2.0 * block_len / (float(n_arms) * float(horizon)) ** 5
