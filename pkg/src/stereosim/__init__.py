"""Deterministic multi-agent simulation of workplace role stereotyping."""

__version__ = "0.1.0"
