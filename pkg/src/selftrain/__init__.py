"""Semi-supervised text classification at desk scale."""

__version__ = "0.1.0"
