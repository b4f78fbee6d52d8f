"""Variational Bayes for models whose likelihood can only be estimated."""

__version__ = "0.1.0"
