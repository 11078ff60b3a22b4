"""Relative norm alignment lab: two-stream training with feature-norm alignment losses."""

__version__ = "0.1.0"
