"""Hierarchical-matrix toolkit for elliptic operators with high-contrast coefficients."""

__version__ = "0.1.0"
