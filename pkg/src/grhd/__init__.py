"""Gradient-reversal hierarchical feature disentanglement for anomalous
sound detection, with a synthetic corpus generator, a from-scratch
reverse-mode differentiation engine, and DCASE-style evaluation metrics."""

__version__ = "0.1.0"
