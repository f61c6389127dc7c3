"""Histogram regression with distance loss and shifted output heads."""

__version__ = "0.1.0"
