"""Measurement, emulation and simulation toolkit for DNS transport comparisons."""

__version__ = "0.1.0"
