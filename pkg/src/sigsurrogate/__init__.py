"""Surrogate-assisted traffic-signal offset optimization and error analysis at GA optima."""

__version__ = "0.1.0"
