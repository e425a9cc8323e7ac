"""Pinna notch (N1) extraction and N1 prediction from pinna anthropometry."""

__version__ = "0.1.0"
