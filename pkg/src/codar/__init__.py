"""Continuous diffusion over token embeddings with contextual autoregressive rounding."""

__version__ = "0.1.0"
