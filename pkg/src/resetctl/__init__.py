"""Simulation and frequency-domain analysis of reset control systems."""

__version__ = "0.1.0"
