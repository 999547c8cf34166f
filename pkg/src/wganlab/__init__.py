"""Mixtures of WGAN-GP generators and critics trained and scored on synthetic data."""

__version__ = "0.1.0"
