"""Subgraph isomorphism counting: exact counters, a synthetic data
generator and neural count regressors."""

__version__ = "0.1.0"
