"""Simulation and signal analysis for pulsed, dipole-coupled TLS defect ensembles."""

__version__ = "0.1.0"
