"""Fourier-domain feature attribution (FFC) with deletion-game evaluation."""

__version__ = "0.1.0"
