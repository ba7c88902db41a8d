"""Numerical laboratory for WKB asymptotics of slowly decaying perturbations."""

__version__ = "0.1.0"
