"""Pose-based word-level sign recognition with graph convolutions and a
transformer encoder over frames."""

__version__ = "0.1.0"
