"""Capillary-gravity waves in a 2D tank with moving contact lines."""

__version__ = "0.1.0"
