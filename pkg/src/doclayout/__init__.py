"""Multimodal document layout analysis on desk-scale synthetic documents."""

__version__ = "0.1.0"
