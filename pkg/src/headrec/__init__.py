"""Review-based cross-domain recommendation in hyperbolic space."""

__version__ = "0.1.0"
