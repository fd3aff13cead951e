"""Desk-scale federated learning simulator for poisoning-security measurement."""

__version__ = "0.1.0"
