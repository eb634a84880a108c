"""Open quantum random walks on crystal lattices."""

__version__ = "0.1.0"
