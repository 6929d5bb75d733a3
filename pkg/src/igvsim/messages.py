"""Plain value types exchanged between the simulator and the robot software."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np


@dataclass(frozen=True)
class MotorCommand:
    linear: float = 0.0  # m/s, forward positive
    angular: float = 0.0  # deg/s, CCW positive


@dataclass(frozen=True)
class LidarScan:
    ranges: Tuple[float, ...]  # meters, beam 0 most clockwise

    def __len__(self):
        return len(self.ranges)


@dataclass(frozen=True)
class GpsFix:
    lat: float
    lon: float


@dataclass(frozen=True)
class HeadingReading:
    heading: float  # degrees clockwise from north, [0, 360)


@dataclass(frozen=True)
class CameraFrame:
    width: int
    height: int
    pixels: bytes  # RGB8, rows top-first

    def __post_init__(self):
        if len(self.pixels) != self.width * self.height * 3:
            raise ValueError("camera pixel buffer length must be width*height*3")

    def as_array(self) -> np.ndarray:
        return np.frombuffer(self.pixels, dtype=np.uint8).reshape(self.height, self.width, 3)
