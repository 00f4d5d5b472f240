"""Greedy layer-wise ("forward thinking") training of deep networks."""
__version__ = "0.1.0"
