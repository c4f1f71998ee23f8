"""Bayesian analytics for natural-gas flaring data."""

__version__ = "0.1.0"
