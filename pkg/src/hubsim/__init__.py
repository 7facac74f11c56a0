"""Pedestrian microsimulation and demand calibration for transit hubs."""

__version__ = "0.1.0"
