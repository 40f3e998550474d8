"""Attention-weighted supervised learning for tabular data."""
