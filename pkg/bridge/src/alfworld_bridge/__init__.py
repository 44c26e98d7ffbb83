"""Thin adapter serving ALFWorld episodes over the engine's JSON-lines env protocol."""

__version__ = "0.1.0"
