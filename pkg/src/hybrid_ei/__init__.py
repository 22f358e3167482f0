"""Hybrid ecological-inference / exit-poll estimation for R x C voting tables."""

__version__ = "0.1.0"
