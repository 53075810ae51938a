"""Lesion-aware AMD classification with weakly supervised lesion activation maps."""

__version__ = "0.1.0"
