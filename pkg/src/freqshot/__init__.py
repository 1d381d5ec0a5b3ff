"""Frequency-aware episodic training for cross-domain few-shot classification."""

__version__ = "0.1.0"
