"""Convexification for the parabolic coefficient inverse problem."""

__version__ = "0.1.0"
