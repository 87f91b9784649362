"""Coalition free-energy games, Harsanyi/Shapley credit and adaptive precision control."""

__version__ = "0.1.0"
