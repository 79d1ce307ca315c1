"""Deterministic discrete-event network, adversary controller and metrics."""
