"""Exact ray/primitive intersection kernels.

Everything here is scalar pure Python and is the reference path for the
vectorised kernels in :mod:`igvsim._kernels`. Distances are meters, angles
radians, z is up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

Point2 = Tuple[float, float]
Point3 = Tuple[float, float, float]

# Tangent rays whose discriminant is this close to zero count as misses.
TANGENT_EPS = 1e-12
_PARALLEL_EPS = 1e-15


@dataclass(frozen=True)
class Ray2:
    origin: Point2
    dir: Point2

    def __post_init__(self):
        n = math.hypot(*self.dir)
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"ray direction must be unit length, got |dir|={n}")

    @classmethod
    def from_angle(cls, origin: Point2, angle: float) -> "Ray2":
        return cls(origin, (math.cos(angle), math.sin(angle)))

    def at(self, t: float) -> Point2:
        return (self.origin[0] + t * self.dir[0], self.origin[1] + t * self.dir[1])


@dataclass(frozen=True)
class Ray3:
    origin: Point3
    dir: Point3

    def __post_init__(self):
        n = math.sqrt(sum(c * c for c in self.dir))
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"ray direction must be unit length, got |dir|={n}")

    def at(self, t: float) -> Point3:
        o, d = self.origin, self.dir
        return (o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2])


@dataclass(frozen=True)
class Hit:
    t: float
    kind: str  # "ground" | "barrel" | "box"
    index: Optional[int] = None


def _smallest_root(b: float, c: float) -> Optional[float]:
    """Smallest t >= 0 of t^2 + 2bt + c = 0, or None (tangent counts as miss)."""
    disc = b * b - c
    if disc <= TANGENT_EPS:
        return None
    sq = math.sqrt(disc)
    t0 = -b - sq
    if t0 >= 0.0:
        return t0
    t1 = -b + sq
    if t1 >= 0.0:
        return t1
    return None


def ray_circle_2d(ray: Ray2, center: Point2, radius: float) -> Optional[float]:
    """Distance along ``ray`` to a circle; the exit distance if the origin is inside."""
    ox = ray.origin[0] - center[0]
    oy = ray.origin[1] - center[1]
    b = ox * ray.dir[0] + oy * ray.dir[1]
    c = ox * ox + oy * oy - radius * radius
    return _smallest_root(b, c)


def _slab(o: float, d: float, h: float, tmin: float, tmax: float):
    if abs(d) < _PARALLEL_EPS:
        if o < -h or o > h:
            return None
        return tmin, tmax
    t1 = (-h - o) / d
    t2 = (h - o) / d
    if t1 > t2:
        t1, t2 = t2, t1
    return max(tmin, t1), min(tmax, t2)


def ray_box_2d(ray: Ray2, center: Point2, half_extents: Point2, yaw: float) -> Optional[float]:
    """Slab test against an oriented rectangle, done in the box frame."""
    c, s = math.cos(yaw), math.sin(yaw)
    px = ray.origin[0] - center[0]
    py = ray.origin[1] - center[1]
    ox, oy = c * px + s * py, -s * px + c * py
    dx = c * ray.dir[0] + s * ray.dir[1]
    dy = -s * ray.dir[0] + c * ray.dir[1]
    span = _slab(ox, dx, half_extents[0], -math.inf, math.inf)
    if span is None:
        return None
    span = _slab(oy, dy, half_extents[1], *span)
    if span is None:
        return None
    tnear, tfar = span
    if tnear > tfar or tfar < 0.0:
        return None
    return tnear if tnear >= 0.0 else tfar


def ray_ground(ray: Ray3) -> Optional[Point3]:
    """Intersection with the plane z=0, for rays starting above it and pointing down."""
    oz, dz = ray.origin[2], ray.dir[2]
    if dz >= 0.0 or oz <= 0.0:
        return None
    t = -oz / dz
    return (ray.origin[0] + t * ray.dir[0], ray.origin[1] + t * ray.dir[1], 0.0)


def ray_cylinder(ray: Ray3, center: Point2, radius: float, height: float) -> Optional[float]:
    """Vertical cylinder on z in [0, height]: lateral surface or top cap, nearest first."""
    ox = ray.origin[0] - center[0]
    oy = ray.origin[1] - center[1]
    oz = ray.origin[2]
    dx, dy, dz = ray.dir
    best = math.inf

    a = dx * dx + dy * dy
    if a > _PARALLEL_EPS:
        b = (ox * dx + oy * dy) / a
        c = (ox * ox + oy * oy - radius * radius) / a
        disc = b * b - c
        if disc > TANGENT_EPS:
            sq = math.sqrt(disc)
            for t in (-b - sq, -b + sq):
                if t >= 0.0 and 0.0 <= oz + t * dz <= height:
                    best = min(best, t)
                    break

    if abs(dz) > _PARALLEL_EPS:
        t = (height - oz) / dz
        if 0.0 <= t < best:
            x = ox + t * dx
            y = oy + t * dy
            if x * x + y * y <= radius * radius:
                best = t

    return best if best < math.inf else None


def ray_box_3d(ray: Ray3, center: Point2, half_extents: Point2, yaw: float,
               height: float) -> Optional[float]:
    """Oriented rectangle extruded over z in [0, height]."""
    c, s = math.cos(yaw), math.sin(yaw)
    px = ray.origin[0] - center[0]
    py = ray.origin[1] - center[1]
    ox, oy = c * px + s * py, -s * px + c * py
    dx = c * ray.dir[0] + s * ray.dir[1]
    dy = -s * ray.dir[0] + c * ray.dir[1]
    span = _slab(ox, dx, half_extents[0], -math.inf, math.inf)
    if span is None:
        return None
    span = _slab(oy, dy, half_extents[1], *span)
    if span is None:
        return None
    h2 = height / 2.0
    span = _slab(ray.origin[2] - h2, ray.dir[2], h2, *span)
    if span is None:
        return None
    tnear, tfar = span
    if tnear > tfar or tfar < 0.0:
        return None
    return tnear if tnear >= 0.0 else tfar


def point_segment_distance(p: Point2, a: Point2, b: Point2) -> float:
    ax, ay = a
    ex, ey = b[0] - ax, b[1] - ay
    wx, wy = p[0] - ax, p[1] - ay
    ll = ex * ex + ey * ey
    u = 0.0 if ll == 0.0 else min(1.0, max(0.0, (wx * ex + wy * ey) / ll))
    return math.hypot(wx - u * ex, wy - u * ey)


def point_band_distance(p: Point2, path) -> float:
    """Distance from ``p`` to a line path's centerline polyline.

    ``path`` is anything with a ``points`` sequence (a :class:`~igvsim.scene.LinePath`
    or a bare list of points). Paint membership is ``distance <= width / 2``.
    """
    pts: Sequence[Point2] = getattr(path, "points", path)
    return min(point_segment_distance(p, pts[i], pts[i + 1]) for i in range(len(pts) - 1))
