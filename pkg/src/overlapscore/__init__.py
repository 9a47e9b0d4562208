"""Corruption overlapping scores for auditing robustness benchmarks."""

__version__ = "0.1.0"
