"""Numerical study of cusp formation in the one-dimensional Euler-Poisson
system for ions, around the self-similar Burgers profile."""

__version__ = "0.1.0"
