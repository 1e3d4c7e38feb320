"""Accuracy analysis toolkit for monocular SLAM reconstructions on a robot arm."""

__version__ = "0.1.0"
