"""Stress concentration in thin elastic gaps: geometry, constants, FEM and asymptotics."""

__version__ = "0.1.0"
