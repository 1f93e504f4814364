"""Blocking-propensity pipeline: event ingestion, behavioral features,
tree-ensemble models and Shapley attributions."""

__version__ = "0.1.0"
