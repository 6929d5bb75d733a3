"""Skid-steer motion model: rate-limited velocity tracking, exact unicycle
integration and circle-footprint collision resolution."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np

from .messages import MotorCommand
from .scene import BoxObstacle, Pose, Scene

TWO_PI = 2.0 * math.pi
ARC_EPS = 1e-6
MAX_PUSH_ITERS = 4
PENETRATION_TOL = 1e-6


@dataclass(frozen=True)
class DriveParams:
    v_max: float = 1.0
    w_max: float = 90.0  # deg/s
    a_max: float = 2.0
    alpha_max: float = 180.0  # deg/s^2
    footprint_radius: float = 0.45

    def __post_init__(self):
        for k in ("v_max", "w_max", "a_max", "alpha_max", "footprint_radius"):
            v = getattr(self, k)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"DriveParams.{k} must be a positive number, got {v!r}")


@dataclass(frozen=True)
class RobotState:
    pose: Pose
    v: float = 0.0
    w: float = 0.0  # rad/s
    commanded: MotorCommand = field(default_factory=MotorCommand)
    collided: bool = False


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    r = math.fmod(a + math.pi, TWO_PI)
    if r <= 0.0:
        r += TWO_PI
    return r - math.pi


def _clamp(x: float, lim: float) -> float:
    return max(-lim, min(lim, x))


def _toward(cur: float, target: float, step: float) -> float:
    if abs(target - cur) <= step:
        return target
    return cur + step if target > cur else cur - step


def apply_motor_response(state: RobotState, cmd: MotorCommand, params: DriveParams,
                         dt: float) -> Tuple[float, float]:
    """Move actual (v, w) toward the clamped command by at most one acceleration step.

    Returns ``(v', w')`` in m/s and rad/s.
    """
    tv = _clamp(cmd.linear, params.v_max)
    tw = math.radians(_clamp(cmd.angular, params.w_max))
    v = _toward(state.v, tv, params.a_max * dt)
    w = _toward(state.w, tw, math.radians(params.alpha_max) * dt)
    return v, w


def integrate_unicycle(pose: Pose, v: float, w: float, dt: float) -> Pose:
    """Exact constant-(v, w) arc over ``dt``; straight line when |w| <= 1e-6 rad/s."""
    th = pose.heading
    if abs(w) > ARC_EPS:
        th1 = th + w * dt
        r = v / w
        x = pose.x + r * (math.sin(th1) - math.sin(th))
        y = pose.y - r * (math.cos(th1) - math.cos(th))
    else:
        th1 = th
        x = pose.x + v * dt * math.cos(th)
        y = pose.y + v * dt * math.sin(th)
    return Pose(x, y, wrap_angle(th1))


def _box_contact(px: float, py: float, r: float, box: BoxObstacle) -> Optional[Tuple[float, float, float]]:
    """(penetration, nx, ny) of a circle against an oriented box, or None if clear."""
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    dx, dy = px - box.center[0], py - box.center[1]
    lx, ly = c * dx + s * dy, -s * dx + c * dy
    hx, hy = box.half_extents
    qx, qy = max(-hx, min(hx, lx)), max(-hy, min(hy, ly))
    ex, ey = lx - qx, ly - qy
    d = math.hypot(ex, ey)
    if d > 0.0:
        pen = r - d
        if pen <= 0.0:
            return None
        nlx, nly = ex / d, ey / d
    else:
        # centre inside the rectangle: leave through the nearest face
        fx, fy = hx - abs(lx), hy - abs(ly)
        if fx <= fy:
            pen, nlx, nly = r + fx, (1.0 if lx >= 0 else -1.0), 0.0
        else:
            pen, nlx, nly = r + fy, 0.0, (1.0 if ly >= 0 else -1.0)
    return pen, c * nlx - s * nly, s * nlx + c * nly


def _barrel_contact(px: float, py: float, r: float, b) -> Optional[Tuple[float, float, float]]:
    dx, dy = px - b.center[0], py - b.center[1]
    d = math.hypot(dx, dy)
    pen = r + b.radius - d
    if pen <= 0.0:
        return None
    if d > 0.0:
        return pen, dx / d, dy / d
    return pen, 1.0, 0.0


def _near_obstacles(px: float, py: float, reach: float, scene: Scene) -> list:
    """Obstacles whose footprint may lie within ``reach`` of (px, py)."""
    out: list = []
    a = scene.arrays
    if len(a.barrels):
        d = np.hypot(a.barrels[:, 0] - px, a.barrels[:, 1] - py)
        out.extend(scene.barrels[i] for i in np.flatnonzero(d < reach + a.barrels[:, 2]))
    if len(a.boxes):
        d = np.hypot(a.boxes[:, 0] - px, a.boxes[:, 1] - py)
        out.extend(scene.boxes[i] for i in np.flatnonzero(d < reach + np.hypot(a.boxes[:, 2], a.boxes[:, 3])))
    return out


def _contact(px: float, py: float, r: float, ob) -> Optional[Tuple[float, float, float]]:
    if isinstance(ob, BoxObstacle):
        return _box_contact(px, py, r, ob)
    return _barrel_contact(px, py, r, ob)


def _contacts(px: float, py: float, r: float, scene: Scene) -> List[Tuple[float, float, float]]:
    out = []
    for ob in _near_obstacles(px, py, r, scene):
        c = _contact(px, py, r, ob)
        if c is not None:
            out.append(c)
    return out


def penetration(x: float, y: float, scene: Scene, footprint_radius: float) -> float:
    """Deepest overlap between the footprint at (x, y) and any obstacle (0 when clear)."""
    return max((c[0] for c in _contacts(x, y, footprint_radius, scene)), default=0.0)


def _pair_candidates(px: float, py: float, r: float, scene: Scene) -> List[Tuple[float, float]]:
    """Intersections of inflated barrel circles near (px, py): pinch resolutions."""
    near = [b for b in scene.barrels
            if math.hypot(px - b.center[0], py - b.center[1]) < 2.0 * (r + b.radius)]
    pts = []
    for i in range(len(near)):
        for j in range(i + 1, len(near)):
            (x0, y0), r0 = near[i].center, near[i].radius + r
            (x1, y1), r1 = near[j].center, near[j].radius + r
            dx, dy = x1 - x0, y1 - y0
            d = math.hypot(dx, dy)
            if d == 0.0 or d > r0 + r1 or d < abs(r0 - r1):
                continue
            a = (r0 * r0 - r1 * r1 + d * d) / (2.0 * d)
            h = math.sqrt(max(0.0, r0 * r0 - a * a))
            mx, my = x0 + a * dx / d, y0 + a * dy / d
            pts.append((mx - h * dy / d, my + h * dx / d))
            pts.append((mx + h * dy / d, my - h * dx / d))
    return pts


def _ring_search(px: float, py: float, r: float, scene: Scene) -> Tuple[float, float]:
    step = 0.01
    for k in range(1, 1000):
        rad = k * step
        for m in range(72):
            a = m * TWO_PI / 72
            x, y = px + rad * math.cos(a), py + rad * math.sin(a)
            if penetration(x, y, scene, r) <= 0.0:
                return x, y
    return px, py


def resolve_collision(pose: Pose, scene: Scene, footprint_radius: float) -> Tuple[Pose, bool]:
    """Push the footprint out of obstacles along the minimum-penetration direction.

    Contacts are resolved one at a time for up to four sweeps. A pinch that
    the sweeps cannot separate (two barrels pushing in opposite directions)
    falls back to the nearest point on the intersection of the inflated
    barrel boundaries. Heading is never changed.
    """
    x, y, r = pose.x, pose.y, footprint_radius
    if not _contacts(x, y, r, scene):
        return pose, False

    # obstacles reachable by any push: initial depth is bounded by r + size
    near = _near_obstacles(x, y, 3.0 * r, scene)
    for _ in range(MAX_PUSH_ITERS):
        moved = False
        for ob in near:
            c = _contact(x, y, r, ob)
            if c is not None:
                pen, nx, ny = c
                x += nx * pen
                y += ny * pen
                moved = True
        if not moved:
            break

    if penetration(x, y, scene, r) > PENETRATION_TOL:
        free = [(math.hypot(cx - pose.x, cy - pose.y), cx, cy)
                for cx, cy in _pair_candidates(pose.x, pose.y, r, scene)
                if penetration(cx, cy, scene, r) <= PENETRATION_TOL]
        if free:
            _, x, y = min(free)
        else:
            x, y = _ring_search(pose.x, pose.y, r, scene)
    return Pose(x, y, pose.heading), True


def step_world(state: RobotState, scene: Scene, params: DriveParams, dt: float) -> RobotState:
    """One physics tick: motor response, arc integration, collision resolution."""
    v, w = apply_motor_response(state, state.commanded, params, dt)
    cand = integrate_unicycle(state.pose, v, w, dt)
    pose, hit = resolve_collision(cand, scene, params.footprint_radius)
    return replace(state, pose=pose, v=v, w=w, collided=hit)


def with_command(state: RobotState, cmd: MotorCommand) -> RobotState:
    return replace(state, commanded=cmd)
