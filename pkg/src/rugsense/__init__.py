"""Rug pull detection from token bytecode and transfer behaviour."""

__version__ = "0.1.0"
