"""Steady fluid-structure interaction in a channel with inflow sensitivities."""

__version__ = "0.1.0"
