"""Differentiable genetic programming for symbolic regression."""

__version__ = "0.1.0"
