"""Sinkhorn adversarial training and accuracy-curve robustness metrics."""

__version__ = "0.1.0"
