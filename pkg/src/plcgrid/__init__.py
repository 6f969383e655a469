"""Synthetic PLC SNR data and analysis pipelines for low-voltage grid monitoring."""

__version__ = "0.1.0"
