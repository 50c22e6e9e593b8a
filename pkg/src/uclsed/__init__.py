"""Uncertainty-guided class-imbalance learning on multi-view message graphs."""
__version__ = "0.1.0"
