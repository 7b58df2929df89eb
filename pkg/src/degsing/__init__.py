"""Numerical laboratory for weighted singular p-Laplace problems."""

__version__ = "0.1.0"
