"""Wavelet-based dynamic tokenization for time series."""

__version__ = "0.1.0"
