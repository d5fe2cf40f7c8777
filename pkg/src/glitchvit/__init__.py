"""Glitch classification toolkit: constant-Q spectrograms, a from-scratch
ViT-B/32 forward pass, and frozen-backbone head training."""

__version__ = "0.1.0"
