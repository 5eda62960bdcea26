"""Rotation estimation on synthetic point clouds via reflected geodesic
flow matching on SO(3)."""

__version__ = "0.1.0"
