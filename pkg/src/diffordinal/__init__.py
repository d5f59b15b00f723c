"""Autoregressive ordinal regression with a diffusion-parameterised step head."""

__version__ = "0.1.0"
