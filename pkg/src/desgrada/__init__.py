"""Spiking graph domain adaptation with degree-conscious thresholds."""

__version__ = "0.1.0"
