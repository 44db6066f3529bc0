"""Desk-scale laboratory for noise-correlation passive imaging."""

__version__ = "0.1.0"
