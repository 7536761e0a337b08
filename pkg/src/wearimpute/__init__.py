"""Masked-transformer imputation and benchmarking for wearable sensor streams."""

__version__ = "0.1.0"
