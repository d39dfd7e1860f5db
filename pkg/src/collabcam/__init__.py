"""Collaborative camera-only 3D detection simulator."""

__version__ = "0.1.0"
