"""Numerics for Campanato spaces, Whitney extensions and restricted
Calderon-Zygmund operators on planar domains."""

__version__ = "0.1.0"
