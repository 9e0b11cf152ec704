"""Consecutive-ensemble sound event localisation and detection."""

__version__ = "0.1.0"
