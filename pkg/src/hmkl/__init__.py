"""Heuristic multiple kernel learning for multi-view image classification."""

__version__ = "0.1.0"
