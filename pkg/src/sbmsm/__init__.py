"""Stochastic budgeted multi-round submodular maximization toolkit."""
__version__ = "0.1.0"
