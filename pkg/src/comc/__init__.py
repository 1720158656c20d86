"""Merging-coordination planner, microsimulator and evaluation tools."""

__version__ = "0.1.0"
