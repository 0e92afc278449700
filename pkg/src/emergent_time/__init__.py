"""Emergent time from a time-independent system + environment eigenproblem."""

__version__ = "0.1.0"
