"""Geometric-optics probing and light-ray reconstruction of time-dependent wave potentials."""

__version__ = "0.1.0"
