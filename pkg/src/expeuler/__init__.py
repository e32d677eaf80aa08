"""Exponential Euler integration of stiff semi-linear SDEs with additive fractional noise."""
__version__ = "0.1.0"
