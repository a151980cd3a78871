"""Simulator and protocol library for overlapping multi-owner LoRaWAN networks."""

__version__ = "0.1.0"
