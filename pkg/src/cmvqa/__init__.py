"""Desk-scale medical VQA: gated multi-encoder fusion with cross-modal self-attention."""

__version__ = "0.1.0"
