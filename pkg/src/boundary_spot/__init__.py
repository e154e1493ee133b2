"""Desk-scale arbitrary-shaped text spotting via boundary point regression."""

__version__ = "0.1.0"
