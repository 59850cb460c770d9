"""Guaranteed reactive power capacities of radial wind-farm collector networks."""

__version__ = "0.1.0"
