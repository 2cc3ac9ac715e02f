"""Reactive whole-body control for a mobile manipulator with SDF collision
avoidance, and the randomized reaching benchmark built around it."""

__version__ = "0.1.0"
