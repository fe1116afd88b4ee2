"""Bayesian hierarchical estimation and projection of total fertility rates."""

__version__ = "0.1.0"
