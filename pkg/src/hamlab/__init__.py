"""Numerical laboratory for transversal dynamics of 4-dimensional Hamiltonian flows."""

__version__ = "0.1.0"
