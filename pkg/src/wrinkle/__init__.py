"""Limit functional, recovery fields and finite-thickness energies for wrinkling sheets."""

__version__ = "0.1.0"
