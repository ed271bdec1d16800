"""Exponentially convergent multiscale FEM for 2D elliptic and Helmholtz problems."""

__all__ = ["__version__"]

__version__ = "0.1.0"
