"""Test package for gossip-bandits."""
