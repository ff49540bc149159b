"""Bias-guided discovery of high-bias intersectional subgroups."""
__version__ = "0.1.0"
