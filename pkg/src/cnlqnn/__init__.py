"""Robust quantum classifier search with a classical noise layer, simulated on statevectors."""

__version__ = "0.1.0"
