"""Waypoint-based audio-visual navigation on grid worlds, built on a small numpy autodiff core."""

__version__ = "0.1.0"
