"""Numerical checks for the second-order energy asymptotics of a dilute Bose gas."""

__version__ = "0.1.0"
