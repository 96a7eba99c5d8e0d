"""Attentive and linear merging of multi-layer transformer embeddings for
anti-spoofing, with a small autodiff core, training schedule and EER tools."""

__version__ = "0.1.0"
