"""Gossip Bandits - distributed adversarial multi-armed and linear bandits over gossip networks."""

__version__ = "0.1.0"
__author__ = "Development Team"
