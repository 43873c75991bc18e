"""Layerwise vision-token keeping-rate schedules: search, cost and rank analysis."""

__version__ = "0.1.0"
