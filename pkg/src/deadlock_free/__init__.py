"""Decentralized CLF-CBF control with adaptive deadlock resolution."""

__version__ = "0.1.0"
