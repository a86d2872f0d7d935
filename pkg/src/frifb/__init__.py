"""Fourier rotation-invariant feature boosting for geospatial object detection."""

__version__ = "0.1.0"
