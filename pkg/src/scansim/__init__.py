"""Semantic image transmission over MIMO with adaptive CSI feedback length."""
__version__ = "0.1.0"
