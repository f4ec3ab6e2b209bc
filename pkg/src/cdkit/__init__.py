"""Toolkit for conversational DAGs and causality-aware response models."""

__version__ = "0.1.0"
