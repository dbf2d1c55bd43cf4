"""Contours, exact sums, cluster expansion and Monte Carlo for the SOS model above a wall."""

__version__ = "0.1.0"
