"""Occlusion-aware facial emotion recognition for head-mounted-display players."""

__version__ = "0.1.0"
