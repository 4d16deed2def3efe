"""Continuous and auction clearing for local flexibility markets."""
__version__ = "0.1.0"
