"""Constrained decoding with regex, grammar and character-level backends."""

__version__ = "0.1.0"
