"""Decomposition synthesis and execution-accuracy evaluation for NL2SQL."""

__version__ = "0.1.0"
