"""Semantic/geometric feature fusion gates with temperature-scaled attention."""

__version__ = "0.1.0"
