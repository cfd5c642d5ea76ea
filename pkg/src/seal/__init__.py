"""Expansion-aware architecture search for data-incremental learning."""

__version__ = "0.1.0"
