"""Numerical laboratory for the nonlinear Schrodinger equation with linear
multiplicative Wiener noise."""

__version__ = "0.1.0"
