"""Bayesian diffusion models for point-cloud reconstruction."""

__version__ = "0.1.0"
