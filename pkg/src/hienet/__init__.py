"""Hierarchical multi-label code assignment with tree positions, label graphs and progressive prediction."""

__version__ = "0.1.0"
