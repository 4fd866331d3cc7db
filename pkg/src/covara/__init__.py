"""Covering-based solvers and certificates for parameterized generalized equations."""

__version__ = "0.1.0"
