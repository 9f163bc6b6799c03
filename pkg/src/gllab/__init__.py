"""Numerical toolkit for warped-product psc constructions."""

__version__ = "0.1.0"
