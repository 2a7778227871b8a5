"""Morisita intrinsic-dimension estimation and MBRM feature selection."""

__version__ = "0.1.0"
