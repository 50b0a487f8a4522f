"""Simulation and measurement toolkit for Bitcoin-style addr gossip."""

__version__ = "0.1.0"
