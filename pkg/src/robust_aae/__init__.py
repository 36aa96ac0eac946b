"""Robust over-the-air adversarial examples against a toy speech recognizer."""

__version__ = "0.1.0"
