"""Courteous trajectory planning, scenario simulation and inverse RL."""

__version__ = "0.1.0"
