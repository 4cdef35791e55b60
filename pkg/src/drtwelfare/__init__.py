"""Welfare-optimal pricing, capacity and trip production for demand-responsive transport."""

__version__ = "0.1.0"
