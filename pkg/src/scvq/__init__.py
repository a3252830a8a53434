"""Codebook-based semantic image transmission with a vector-to-index transformer."""

__version__ = "0.1.0"
