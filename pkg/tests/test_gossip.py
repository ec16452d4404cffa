"""Tests for the accelerated gossip engine."""

import logging

import numpy as np
import pytest

from src.errors import DimensionMismatchError, OutOfRangeError
from src.gossip import (
    GossipBuffer,
    acceleration_bound,
    block_length,
    consensus_bound,
    consensus_error,
    frobenius_gap,
    gossip_step,
    mixing_coefficient,
    run_block_gossip,
)
from src.graph_topology import build_topology, metropolis_weights, spectral_gap


@pytest.fixture
def complete16():
    """Metropolis weights on the complete graph with 16 agents."""
    return metropolis_weights(build_topology("complete", 16))


# Test mixing_coefficient
def test_mixing_coefficient_values():
    """Test kappa at sigma2 = 0 and 0.99."""
    assert mixing_coefficient(0.0) == pytest.approx(0.5)
    assert mixing_coefficient(0.99) == pytest.approx(0.876372, rel=1e-5)


@pytest.mark.parametrize("sigma2", [1.0, -0.1, 1.5])
def test_mixing_coefficient_rejects_out_of_range(sigma2):
    """Test that sigma2 outside [0, 1) is refused."""
    with pytest.raises(OutOfRangeError):
        mixing_coefficient(sigma2)


# Test block_length
def test_block_length_formula():
    """Test B for K=2, T=10^4, N=16 on two spectra."""
    assert block_length(2, 10_000, 16, 0.0).block_len_b == 213
    assert block_length(2, 10_000, 16, 0.75).block_len_b == 425


def test_block_length_override_is_flagged():
    """Test that an explicit B is used and flagged."""
    params = block_length(2, 10_000, 16, 0.0, override=50)
    assert params.block_len_b == 50
    assert params.overridden


def test_block_length_rejects_zero_override():
    """Test that B = 0 is refused."""
    with pytest.raises(OutOfRangeError):
        block_length(2, 10_000, 16, 0.0, override=0)


def test_block_length_warns_when_longer_than_horizon(caplog):
    """Test the warning when B exceeds T."""
    with caplog.at_level(logging.WARNING):
        params = block_length(2, 100, 16, 0.9)
    assert params.exceeds_horizon
    assert "exceeds horizon" in caplog.text


def test_block_length_rejects_tiny_problems():
    """Test that K < 2 is refused."""
    with pytest.raises(OutOfRangeError):
        block_length(1, 100, 4, 0.0)


# Test gossip_step
def test_gossip_step_preserves_the_mean(complete16):
    """Test that one step keeps the network mean."""
    values = np.random.default_rng(1).normal(size=(16, 3))
    buf = gossip_step(GossipBuffer.initialize(values), complete16, 0.5)
    np.testing.assert_allclose(buf.mean(), values.mean(axis=0), atol=1e-12)
    assert buf.step_index == 1


def test_ten_thousand_steps_preserve_the_mean():
    """Test that the network mean survives 10^4 accelerated steps on a slow ring."""
    w = metropolis_weights(build_topology("ring", 12))
    kappa = mixing_coefficient(spectral_gap(w).sigma2)
    values = np.random.default_rng(13).uniform(-50, 50, size=(12, 4))
    buf = GossipBuffer.initialize(values)
    for _ in range(10_000):
        buf = gossip_step(buf, w, kappa)
    assert buf.step_index == 10_000
    np.testing.assert_allclose(buf.mean(), values.mean(axis=0), atol=1e-9)
    np.testing.assert_allclose(buf.prev.mean(axis=0), values.mean(axis=0), atol=1e-9)


def test_complete_graph_reaches_consensus(complete16):
    """Test that one block of gossip meets the consensus bound."""
    values = np.random.default_rng(2).uniform(size=(16, 2)) * 100
    params = block_length(2, 10_000, 16, spectral_gap(complete16).sigma2)
    buf = run_block_gossip(GossipBuffer.initialize(values), complete16, params)
    assert consensus_error(buf) <= max(consensus_bound(2, 10_000, params.block_len_b), 1e-12 * 100)


@pytest.mark.parametrize("topology", [("ring", {}), ("grid", {"rows": 4, "cols": 4})])
@pytest.mark.parametrize("steps", [10, 25, 50])
def test_frobenius_gap_decays_at_accelerated_rate(topology, steps):
    """Test the accelerated contraction on random starting points."""
    kind, extra = topology
    n = 8 if kind == "ring" else 16
    w = metropolis_weights(build_topology(kind, n, **extra))
    sigma2 = spectral_gap(w).sigma2
    kappa = mixing_coefficient(sigma2)
    rng = np.random.default_rng(steps)
    for _ in range(20):
        buf = GossipBuffer.initialize(rng.normal(size=(n, 3)))
        initial = frobenius_gap(buf)
        for _ in range(steps):
            buf = gossip_step(buf, w, kappa)
        assert frobenius_gap(buf) <= acceleration_bound(sigma2, steps) * initial + 1e-12


def test_consensus_error_of_agreeing_agents_is_zero():
    """Test that identical rows have zero consensus error."""
    buf = GossipBuffer.initialize(np.tile([1.0, 2.0], (4, 1)))
    assert consensus_error(buf) == 0.0


# Test GossipBuffer
def test_gossip_step_checks_agent_count(complete16):
    """Test that a buffer for 4 agents cannot gossip over 16."""
    with pytest.raises(DimensionMismatchError):
        gossip_step(GossipBuffer.initialize(np.zeros((4, 2))), complete16, 0.5)


def test_buffer_rejects_flat_input():
    """Test that a 1-d buffer is refused."""
    with pytest.raises(DimensionMismatchError):
        GossipBuffer.initialize(np.zeros(4))


def test_buffer_starts_with_equal_iterates():
    """Test that a fresh buffer holds prev == curr."""
    buf = GossipBuffer.initialize(np.arange(6.0).reshape(3, 2))
    np.testing.assert_array_equal(buf.prev, buf.curr)
    assert buf.step_index == 0
