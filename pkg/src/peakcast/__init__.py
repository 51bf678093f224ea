"""Probabilistic hourly air-quality forecasting toolkit."""

__version__ = "0.1.0"
