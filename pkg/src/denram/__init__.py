"""Behavioral simulator and training framework for RRAM dendritic delay networks."""

__version__ = "0.1.0"
