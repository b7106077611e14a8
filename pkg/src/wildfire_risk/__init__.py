"""Wildfire occurrence risk over forest carbon projects: KBDI fire weather,
an explainable constrained neural classifier, project-level validation and
climate-ensemble projection."""

__version__ = "0.1.0"
