"""Pseudo-spherical surfaces from k-th order evolution equations."""

__version__ = "0.1.0"
