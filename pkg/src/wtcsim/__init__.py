"""Simulation laboratory for the Gaussian wiretap channel with output feedback."""

__version__ = "0.1.0"
