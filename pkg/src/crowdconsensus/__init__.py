"""Consensus analysis for crowdsourced annotations."""

__version__ = "0.1.0"
