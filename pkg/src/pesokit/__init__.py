"""Subspace-minimization view of low-rank fine-tuning on desk-scale problems."""

__version__ = "0.1.0"
