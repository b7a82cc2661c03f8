"""Noise-aware photonic GAN simulator."""

__version__ = "0.1.0"
