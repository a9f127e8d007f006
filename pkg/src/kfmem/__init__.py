"""Keyframe memory, dual-rate orchestration and simulated memory tasks."""

__version__ = "0.1.0"
