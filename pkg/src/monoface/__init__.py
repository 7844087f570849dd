"""Coarse-to-fine 3D face height-field reconstruction from a single image."""

__version__ = "0.1.0"
