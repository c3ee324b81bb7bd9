"""Desk-scale CycleVAE voice conversion with an autoregressive vocoder."""

__version__ = "0.1.0"
