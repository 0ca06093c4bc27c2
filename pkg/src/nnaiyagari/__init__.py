"""Aiyagari economy with neural-network learning agents."""

__version__ = "0.1.0"
