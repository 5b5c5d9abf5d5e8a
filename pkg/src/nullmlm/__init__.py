"""Null-token masked language modeling for word insertion and deletion errors."""

__version__ = "0.1.0"
