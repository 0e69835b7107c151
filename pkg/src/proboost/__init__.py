"""Uncertainty-driven boosting of probabilistic neural classifiers."""

__version__ = "0.1.0"
