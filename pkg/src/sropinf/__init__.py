"""Symmetry-reduced operator inference for shift-equivariant 1D periodic PDEs."""

__version__ = "0.1.0"
