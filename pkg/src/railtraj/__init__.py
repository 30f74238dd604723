"""Passenger trajectory reconstruction for urban rail from AFC and AVL logs."""

__version__ = "0.1.0"
