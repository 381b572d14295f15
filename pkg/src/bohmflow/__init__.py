"""Pilot-wave trajectory ensembles in quantum scattering situations."""

__version__ = "0.1.0"
