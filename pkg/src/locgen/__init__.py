"""Locate-and-generate question answering over synthetic scene text."""

__version__ = "0.1.0"
