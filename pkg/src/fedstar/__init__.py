"""Exact homogeneous star products on cotangent bundles of a coordinate chart."""

__version__ = "0.1.0"
