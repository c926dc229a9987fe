"""Desk-scale streamflow calibration chain."""

__version__ = "0.1.0"
