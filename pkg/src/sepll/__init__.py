"""Weak-supervision text classification with separated task and LF latent paths."""

__version__ = "0.1.0"
