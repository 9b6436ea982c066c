"""Optimal power flow with integer-stepped in-phase and quadrature transformer control."""
__version__ = "0.1.0"
