"""Zonotope-tube LPV-MPC stack for a dynamic bicycle vehicle model."""

__version__ = "0.1.0"
