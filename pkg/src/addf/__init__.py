"""Layered crop-stress detection: NDVI variance imaging and MCES-P learners."""

__version__ = "0.1.0"
