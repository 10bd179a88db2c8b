"""Numerical laboratory for the stochastic FitzHugh-Nagumo random dynamical system."""

__version__ = "0.1.0"
