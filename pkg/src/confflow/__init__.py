"""Equivariant OT conditional flow matching for molecular conformations."""

__version__ = "0.1.0"
