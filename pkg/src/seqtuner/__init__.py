"""Sequence-model toolkit for hyperparameter tuning studies."""

__version__ = "0.1.0"
