"""Lightweight YOLOv5 workbench: block zoo, cost accounting, box losses and metrics."""

__version__ = "0.1.0"
