"""Discrete (dbar, s)-Neumann laboratory."""

__version__ = "0.1.0"
