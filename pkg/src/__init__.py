"""Tether-net debris capture toolkit."""

__version__ = "0.3.0"
