"""Discrete representation learning by information maximization with self-augmented training."""

__version__ = "0.1.0"
