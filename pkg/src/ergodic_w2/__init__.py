"""Empirical-measure convergence experiments for confluent SDEs at stationarity."""

__version__ = "0.1.0"
