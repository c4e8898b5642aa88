"""Metric-scale monocular multi-body SLAM back-end."""

__version__ = "0.1.0"
