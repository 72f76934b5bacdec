"""Latent flow matching with hardmax-gated transformers."""

__version__ = "0.1.0"
