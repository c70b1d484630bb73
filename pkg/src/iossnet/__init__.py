"""Certify exponential incremental detectability of networks of coupled subsystems."""

__version__ = "0.1.0"
