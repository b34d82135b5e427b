"""Thermal modeling, identification and thermally-aware posture selection
for multi-limbed robots with electric actuators."""

__version__ = "0.1.0"
