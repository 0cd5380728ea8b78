"""Flow-community detection over temporal transaction graphs."""

__version__ = "0.1.0"
