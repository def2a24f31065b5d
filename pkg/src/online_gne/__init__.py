"""Distributed generalized Nash equilibrium seeking for online games with coupled constraints."""

__version__ = "0.1.0"
