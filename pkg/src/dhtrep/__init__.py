"""Chord replication simulator and reliability toolkit."""

__version__ = "0.1.0"
