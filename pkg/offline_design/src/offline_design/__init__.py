"""Offline gain synthesis: polytopic H-infinity LMI design, LQR baseline,
and gains-file export for the zonotube runtime."""

__version__ = "0.1.0"
