"""Unsupervised per-speaker dialogue summarization."""

__version__ = "0.1.0"
