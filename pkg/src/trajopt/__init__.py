"""Gradient-based design of non-Cartesian MRI k-space sampling trajectories."""

__version__ = "0.1.0"
