"""Pose-to-measurement models for the LIDAR, GPS, compass and camera, plus
the freshness clock that decides when each sensor has new data."""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from . import _kernels
from .dynamics import RobotState
from .geometry import Ray3
from .messages import CameraFrame, GpsFix, HeadingReading, LidarScan
from .scene import GeoOrigin, Pose, Scene

# meters per degree of latitude on the WGS-84 equatorial radius: pi/180 * 6378137
METERS_PER_DEG = math.pi / 180.0 * 6378137.0


@dataclass(frozen=True)
class LidarConfig:
    fov: float = 240.0  # degrees
    beams: int = 683
    max_range: float = 5.6
    min_range: float = 0.02
    mount_height: float = 0.4
    mount_forward_offset: float = 0.3
    rate: float = 10.0
    noise_std: float = 0.0

    def __post_init__(self):
        if self.beams < 2:
            raise ValueError("LidarConfig.beams must be >= 2")
        if not 0.0 <= self.min_range < self.max_range:
            raise ValueError("LidarConfig needs 0 <= min_range < max_range")
        if not 0.0 < self.fov <= 360.0:
            raise ValueError("LidarConfig.fov must be in (0, 360]")

    def beam_angles(self) -> np.ndarray:
        """Beam angles relative to heading in radians, beam 0 most clockwise."""
        fov = math.radians(self.fov)
        return -fov / 2.0 + np.arange(self.beams) * (fov / (self.beams - 1))


@dataclass(frozen=True)
class CameraMount:
    offset: Tuple[float, float, float] = (0.2, 0.0, 1.0)  # forward, left, up
    pitch: float = 20.0  # degrees below horizontal
    hfov: float = 60.0
    width: int = 160
    height: int = 120
    rate: float = 10.0

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0 or self.width * self.height > 1_000_000:
            raise ValueError("CameraMount needs 0 < width*height <= 1M pixels")
        if not 0.0 < self.hfov < 180.0:
            raise ValueError("CameraMount.hfov must be in (0, 180)")

    @property
    def focal(self) -> float:
        """Focal length in pixels."""
        return (self.width / 2.0) / math.tan(math.radians(self.hfov) / 2.0)

    @property
    def vfov(self) -> float:
        return math.degrees(2.0 * math.atan(math.tan(math.radians(self.hfov) / 2.0)
                                            * self.height / self.width))


@dataclass
class FreshnessClock:
    """Fixed-cadence scheduler. Due times are ``fired / rate`` so they never drift."""

    rate: float
    fired: int = 0

    @property
    def next_due(self) -> float:
        return self.fired / self.rate if self.rate > 0 else math.inf


def poll_due(clock: FreshnessClock, sim_time: float) -> bool:
    """True (and advance the clock) when ``sim_time`` has reached the next due time."""
    if clock.rate <= 0:
        return False
    if sim_time >= clock.next_due - 1e-9:
        clock.fired += 1
        return True
    return False


def lidar_origin(pose: Pose, cfg: LidarConfig) -> Tuple[float, float]:
    return (pose.x + cfg.mount_forward_offset * math.cos(pose.heading),
            pose.y + cfg.mount_forward_offset * math.sin(pose.heading))


def scan_lidar(scene: Scene, state: RobotState, cfg: LidarConfig,
               rng: Optional[np.random.Generator] = None) -> LidarScan:
    ox, oy = lidar_origin(state.pose, cfg)
    a = scene.arrays
    out = np.empty(cfg.beams)
    _kernels.lidar_scan(out, ox, oy, state.pose.heading, math.radians(cfg.fov), cfg.min_range,
                        cfg.max_range, cfg.mount_height, a.barrels, a.boxes)
    if cfg.noise_std > 0.0:
        if rng is None:
            raise ValueError("a seeded generator is required when noise_std > 0")
        out = np.clip(out + rng.normal(0.0, cfg.noise_std, cfg.beams), cfg.min_range, cfg.max_range)
    return LidarScan(tuple(out.tolist()))


def gps_from_pose(pose: Pose, geo: GeoOrigin, noise_std: float = 0.0,
                  rng: Optional[np.random.Generator] = None) -> GpsFix:
    """Equirectangular tangent-plane mapping; optional noise (meters) in the plane."""
    x, y = pose.x, pose.y
    if noise_std > 0.0:
        if rng is None:
            raise ValueError("a seeded generator is required when noise_std > 0")
        ex, ey = rng.normal(0.0, noise_std, 2)
        x, y = x + float(ex), y + float(ey)
    lat = geo.lat0 + y / METERS_PER_DEG
    lon = geo.lon0 + x / (METERS_PER_DEG * math.cos(math.radians(geo.lat0)))
    return GpsFix(lat, lon)


def pose_from_gps(fix: GpsFix, geo: GeoOrigin) -> Tuple[float, float]:
    """Inverse of :func:`gps_from_pose` (noise-free)."""
    y = (fix.lat - geo.lat0) * METERS_PER_DEG
    x = (fix.lon - geo.lon0) * (METERS_PER_DEG * math.cos(math.radians(geo.lat0)))
    return x, y


def compass_from_pose(pose: Pose, noise_std: float = 0.0,
                      rng: Optional[np.random.Generator] = None) -> HeadingReading:
    h = 90.0 - math.degrees(pose.heading)
    if noise_std > 0.0:
        if rng is None:
            raise ValueError("a seeded generator is required when noise_std > 0")
        h += float(rng.normal(0.0, noise_std))
    h %= 360.0
    if h >= 360.0:  # -tiny % 360 rounds up to 360.0
        h = 0.0
    return HeadingReading(h)


def camera_basis(pose: Pose, mount: CameraMount) -> np.ndarray:
    """[position, forward, left, up] of the camera in world coordinates, flattened."""
    c, s = math.cos(pose.heading), math.sin(pose.heading)
    fw, lf, up = mount.offset
    p = math.radians(mount.pitch)
    cp, sp = math.cos(p), math.sin(p)
    return np.array([
        pose.x + fw * c - lf * s, pose.y + fw * s + lf * c, up,
        c * cp, s * cp, -sp,
        -s, c, 0.0,
        c * sp, s * sp, cp,
    ])


def camera_ray(pose: Pose, mount: CameraMount, i: int, j: int) -> Ray3:
    """World ray through the centre of pixel column ``i``, row ``j`` (row 0 on top)."""
    cam = camera_basis(pose, mount).tolist()
    focal = mount.focal
    ui = i + 0.5 - mount.width / 2.0
    vj = j + 0.5 - mount.height / 2.0
    d0 = cam[3] * focal - cam[6] * ui - cam[9] * vj
    d1 = cam[4] * focal - cam[7] * ui - cam[10] * vj
    d2 = cam[5] * focal - cam[8] * ui - cam[11] * vj
    n = math.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
    return Ray3((cam[0], cam[1], cam[2]), (d0 / n, d1 / n, d2 / n))


_scratch = threading.local()


def _render_scratch(h: int, w: int):
    bufs = getattr(_scratch, "bufs", None)
    if bufs is None or bufs[0].shape[:2] != (h, w):
        n = h * w
        bufs = (np.empty((h, w, 3)), np.empty((h, w)), np.empty(n), np.empty(n),
                np.empty(n, dtype=np.int64), np.empty((n, 3), dtype=np.int64))
        _scratch.bufs = bufs
    return bufs


def render_camera(scene: Scene, state: RobotState, mount: CameraMount) -> CameraFrame:
    a = scene.arrays
    out = np.empty((mount.height, mount.width, 3), dtype=np.uint8)
    _kernels.render(out, camera_basis(state.pose, mount), mount.focal, a.barrels, a.boxes,
                    a.terrain, a.segs, a.grid_meta, a.cell_start, a.cell_items,
                    *_render_scratch(mount.height, mount.width))
    return CameraFrame(mount.width, mount.height, out.tobytes())


@dataclass
class SensorSuite:
    """Configuration for the four simulated sensors."""

    lidar: LidarConfig = field(default_factory=LidarConfig)
    camera: CameraMount = field(default_factory=CameraMount)
    gps_rate: float = 10.0
    compass_rate: float = 25.0
    gps_noise_std: float = 0.0  # meters
    compass_noise_std: float = 0.0  # degrees
