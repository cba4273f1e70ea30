"""Delay alignment modulation link simulation with hybrid beamforming."""

__version__ = "0.1.0"
