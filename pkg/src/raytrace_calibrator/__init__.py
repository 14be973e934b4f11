"""Raytrace Calibrator - TX/RX location calibration through PDP alignment."""

__version__ = "1.0.0"
