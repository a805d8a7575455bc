"""Weighted space-time minimization and verification for strongly
competing species systems."""

__version__ = "0.1.0"
