from .engine import (
    GeometryArrays,
    StationState,
    Trajectory,
    World,
    all_forces,
    build_world,
    simulate,
    social_force,
)
from .params import SfmParams

__all__ = [
    "GeometryArrays",
    "SfmParams",
    "StationState",
    "Trajectory",
    "World",
    "all_forces",
    "build_world",
    "simulate",
    "social_force",
]
