"""Dynamic multi-projection-head clustering for multi-block feature vectors."""

__version__ = "0.1.0"
