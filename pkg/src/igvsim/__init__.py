"""Headless ground-vehicle simulator for IGVC-style obstacle courses.

The simulator (``igvsim``) steps a skid-steer robot through a scene of painted
lane lines, barrels and boxes, and streams LIDAR, GPS, compass and camera data
to robot software over one TCP connection per channel; the robot software
answers with motor commands. The client side (roles, simulation-backed
channels, a demo navigator) lives in :mod:`igvsim.roles`,
:mod:`igvsim.client` and :mod:`igvsim.nav`.
"""

import importlib

from .messages import CameraFrame, GpsFix, HeadingReading, LidarScan, MotorCommand

__version__ = "0.1.0"

# Scene names load on first use so that importing the navigation side does not
# pull in the simulator (and its compiled kernels).
_SCENE_NAMES = {"Barrel", "BoxObstacle", "GeoOrigin", "Goal", "LinePath", "Pose", "Scene",
                "SceneError", "TerrainStyle", "load_sample_course", "load_scene", "parse_scene",
                "serialize_scene", "validate_scene"}


def __getattr__(name):
    if name in _SCENE_NAMES:
        return getattr(importlib.import_module(".scene", __name__), name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")

__all__ = [
    "Barrel", "BoxObstacle", "CameraFrame", "GeoOrigin", "Goal", "GpsFix", "HeadingReading",
    "LidarScan", "LinePath", "MotorCommand", "Pose", "Scene", "SceneError", "TerrainStyle",
    "load_sample_course", "load_scene", "parse_scene", "serialize_scene", "validate_scene",
]
