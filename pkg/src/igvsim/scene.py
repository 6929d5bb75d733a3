"""Course data model, the JSON scene format, and ground shading.

World frame is ENU: +X east, +Y north, headings CCW from +X in radians.
Scene files store angles in degrees.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence, Tuple

import jsonschema
import numpy as np

from . import _kernels
from .geometry import point_band_distance

Point2 = Tuple[float, float]
RGB8 = Tuple[int, int, int]

SEGMENT_GRID_CELL = 1.0


class SceneError(ValueError):
    """Raised for scene files that cannot be parsed into a Scene."""


@dataclass(frozen=True)
class GeoOrigin:
    lat0: float
    lon0: float


@dataclass(frozen=True)
class Barrel:
    center: Point2
    radius: float = 0.28
    height: float = 1.0


@dataclass(frozen=True)
class BoxObstacle:
    center: Point2
    half_extents: Point2
    yaw: float = 0.0
    height: float = 1.0


@dataclass(frozen=True)
class LinePath:
    points: Tuple[Point2, ...]
    width: float = 0.08
    intensity: float = 1.0


@dataclass(frozen=True)
class TerrainStyle:
    grass_base: RGB8 = (64, 120, 48)
    noise_amplitude: float = 0.15
    noise_scale: float = 0.5
    noise_seed: int = 0


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    heading: float = 0.0


@dataclass(frozen=True)
class Goal:
    center: Point2
    radius: float

    def contains(self, x: float, y: float) -> bool:
        return math.hypot(x - self.center[0], y - self.center[1]) <= self.radius


class SceneArrays(NamedTuple):
    """Flat float arrays consumed by the compiled kernels."""

    barrels: np.ndarray  # (n, 4): x, y, radius, height
    boxes: np.ndarray  # (n, 8): x, y, hx, hy, yaw, height, cos(yaw), sin(yaw)
    segs: np.ndarray  # (n, 6): x0, y0, x1, y1, width/2, intensity
    grid_meta: np.ndarray  # x0, y0, cell, nx, ny
    cell_start: np.ndarray
    cell_items: np.ndarray
    terrain: np.ndarray  # r, g, b, amplitude, scale, seed


@dataclass(frozen=True)
class Scene:
    geo: GeoOrigin
    spawn: Pose
    terrain: TerrainStyle = field(default_factory=TerrainStyle)
    lines: Tuple[LinePath, ...] = ()
    barrels: Tuple[Barrel, ...] = ()
    boxes: Tuple[BoxObstacle, ...] = ()
    goal: Optional[Goal] = None

    @cached_property
    def arrays(self) -> SceneArrays:
        return _build_arrays(self)

    def with_obstacles(self, barrels: Sequence[Barrel] = (), boxes: Sequence[BoxObstacle] = ()) -> "Scene":
        """Copy of this scene with the obstacle lists replaced."""
        return Scene(self.geo, self.spawn, self.terrain, self.lines, tuple(barrels), tuple(boxes), self.goal)


def _build_segment_grid(segs: np.ndarray):
    if len(segs) == 0:
        return (np.zeros(5), np.zeros(1, dtype=np.int64), np.zeros(0, dtype=np.int64))
    lo_x = np.minimum(segs[:, 0], segs[:, 2]) - segs[:, 4]
    hi_x = np.maximum(segs[:, 0], segs[:, 2]) + segs[:, 4]
    lo_y = np.minimum(segs[:, 1], segs[:, 3]) - segs[:, 4]
    hi_y = np.maximum(segs[:, 1], segs[:, 3]) + segs[:, 4]
    cell = SEGMENT_GRID_CELL
    gx0, gy0 = math.floor(lo_x.min()) - cell, math.floor(lo_y.min()) - cell
    nx = int(math.ceil((hi_x.max() - gx0) / cell)) + 1
    ny = int(math.ceil((hi_y.max() - gy0) / cell)) + 1
    buckets: List[List[int]] = [[] for _ in range(nx * ny)]
    for s in range(len(segs)):
        i0, i1 = int((lo_x[s] - gx0) // cell), int((hi_x[s] - gx0) // cell)
        j0, j1 = int((lo_y[s] - gy0) // cell), int((hi_y[s] - gy0) // cell)
        for j in range(j0, j1 + 1):
            for i in range(i0, i1 + 1):
                buckets[j * nx + i].append(s)
    start = np.zeros(nx * ny + 1, dtype=np.int64)
    start[1:] = np.cumsum([len(b) for b in buckets])
    items = np.array([s for b in buckets for s in b], dtype=np.int64)
    return np.array([gx0, gy0, cell, nx, ny], dtype=float), start, items


def _build_arrays(scene: Scene) -> SceneArrays:
    barrels = np.array([[b.center[0], b.center[1], b.radius, b.height] for b in scene.barrels],
                       dtype=float).reshape(-1, 4)
    boxes = np.array([[b.center[0], b.center[1], b.half_extents[0], b.half_extents[1], b.yaw,
                       b.height, math.cos(b.yaw), math.sin(b.yaw)] for b in scene.boxes],
                     dtype=float).reshape(-1, 8)
    segs = np.array([[p.points[i][0], p.points[i][1], p.points[i + 1][0], p.points[i + 1][1],
                      p.width / 2.0, p.intensity]
                     for p in scene.lines for i in range(len(p.points) - 1)], dtype=float).reshape(-1, 6)
    meta, start, items = _build_segment_grid(segs)
    t = scene.terrain
    terrain = np.array([*t.grass_base, t.noise_amplitude, t.noise_scale, t.noise_seed & 0xFFFFFFFF],
                       dtype=float)
    return SceneArrays(barrels, boxes, segs, meta, start, items, terrain)


def ground_color_at(scene: Scene, p: Point2) -> RGB8:
    """Ground color at world point ``p``: line paint if inside a band, else grass."""
    a = scene.arrays
    out = np.zeros((1, 3), dtype=np.int64)
    _kernels.shade_ground(np.array([float(p[0])]), np.array([float(p[1])]), a.terrain, a.segs,
                          a.grid_meta, a.cell_start, a.cell_items, out)
    return (int(out[0, 0]), int(out[0, 1]), int(out[0, 2]))


# -- file format -------------------------------------------------------------

_num = {"type": "number"}
_pt = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


SCENE_SCHEMA = _obj({
    "geo": _obj({"lat0": _num, "lon0": _num}, ["lat0", "lon0"]),
    "spawn": _obj({"x": _num, "y": _num, "heading_deg": _num}, ["x", "y"]),
    "terrain": _obj({
        "grass_base": {"type": "array", "items": {"type": "integer"}, "minItems": 3, "maxItems": 3},
        "noise_amplitude": _num, "noise_scale": _num, "noise_seed": {"type": "integer"},
    }),
    "lines": {"type": "array", "items": _obj(
        {"points": {"type": "array", "items": _pt}, "width": _num, "intensity": _num}, ["points"])},
    "barrels": {"type": "array", "items": _obj(
        {"x": _num, "y": _num, "radius": _num, "height": _num}, ["x", "y"])},
    "boxes": {"type": "array", "items": _obj(
        {"x": _num, "y": _num, "hx": _num, "hy": _num, "yaw_deg": _num, "height": _num},
        ["x", "y", "hx", "hy"])},
    "goal": _obj({"x": _num, "y": _num, "radius": _num}, ["x", "y", "radius"]),
}, ["geo", "spawn"])


def _where(err: jsonschema.ValidationError) -> str:
    path = "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in err.absolute_path)
    return path.lstrip(".") or "<root>"


def _describe(err: jsonschema.ValidationError) -> str:
    if err.validator == "additionalProperties":
        extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
        return f"unknown key {', '.join(repr(k) for k in extra)} in {_where(err)}"
    if err.validator == "required" and not err.absolute_path:
        return f"missing required section: {err.message.split()[0]}"
    return f"{_where(err)}: {err.message}"


def _f(v) -> float:
    return float(v)


def parse_scene(text: str) -> Scene:
    """Parse scene-file JSON text. Raises :class:`SceneError` on any format problem."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise SceneError(f"syntax error at line {e.lineno}, column {e.colno}: {e.msg}") from e
    errors = sorted(jsonschema.Draft7Validator(SCENE_SCHEMA).iter_errors(doc),
                    key=lambda e: (list(e.absolute_path), e.validator))
    if errors:
        raise SceneError("; ".join(_describe(e) for e in errors))

    d = TerrainStyle()
    t = doc.get("terrain", {})
    terrain = TerrainStyle(
        grass_base=tuple(int(c) for c in t.get("grass_base", d.grass_base)),
        noise_amplitude=_f(t.get("noise_amplitude", d.noise_amplitude)),
        noise_scale=_f(t.get("noise_scale", d.noise_scale)),
        noise_seed=int(t.get("noise_seed", d.noise_seed)),
    )
    lines = tuple(
        LinePath(points=tuple((_f(x), _f(y)) for x, y in ln["points"]),
                 width=_f(ln.get("width", LinePath.width)),
                 intensity=_f(ln.get("intensity", LinePath.intensity)))
        for ln in doc.get("lines", []))
    barrels = tuple(
        Barrel((_f(b["x"]), _f(b["y"])), _f(b.get("radius", Barrel.radius)),
               _f(b.get("height", Barrel.height)))
        for b in doc.get("barrels", []))
    boxes = tuple(
        BoxObstacle((_f(b["x"]), _f(b["y"])), (_f(b["hx"]), _f(b["hy"])),
                    math.radians(_f(b.get("yaw_deg", 0.0))), _f(b.get("height", BoxObstacle.height)))
        for b in doc.get("boxes", []))
    g = doc.get("goal")
    goal = Goal((_f(g["x"]), _f(g["y"])), _f(g["radius"])) if g is not None else None
    sp = doc["spawn"]
    return Scene(
        geo=GeoOrigin(_f(doc["geo"]["lat0"]), _f(doc["geo"]["lon0"])),
        spawn=Pose(_f(sp["x"]), _f(sp["y"]), math.radians(_f(sp.get("heading_deg", 0.0)))),
        terrain=terrain, lines=lines, barrels=barrels, boxes=boxes, goal=goal,
    )


def scene_to_dict(scene: Scene) -> dict:
    doc = {
        "geo": {"lat0": scene.geo.lat0, "lon0": scene.geo.lon0},
        "spawn": {"x": scene.spawn.x, "y": scene.spawn.y,
                  "heading_deg": math.degrees(scene.spawn.heading)},
        "terrain": {"grass_base": list(scene.terrain.grass_base),
                    "noise_amplitude": scene.terrain.noise_amplitude,
                    "noise_scale": scene.terrain.noise_scale,
                    "noise_seed": scene.terrain.noise_seed},
        "lines": [{"points": [list(p) for p in ln.points], "width": ln.width,
                   "intensity": ln.intensity} for ln in scene.lines],
        "barrels": [{"x": b.center[0], "y": b.center[1], "radius": b.radius, "height": b.height}
                    for b in scene.barrels],
        "boxes": [{"x": b.center[0], "y": b.center[1], "hx": b.half_extents[0],
                   "hy": b.half_extents[1], "yaw_deg": math.degrees(b.yaw), "height": b.height}
                  for b in scene.boxes],
    }
    if scene.goal is not None:
        doc["goal"] = {"x": scene.goal.center[0], "y": scene.goal.center[1],
                       "radius": scene.goal.radius}
    return doc


def serialize_scene(scene: Scene) -> str:
    return json.dumps(scene_to_dict(scene), indent=2)


def load_scene(path) -> Scene:
    return parse_scene(Path(path).read_text(encoding="utf-8"))


def sample_course_path() -> Path:
    return Path(str(resources.files("igvsim") / "data" / "sample_course.json"))


def load_sample_course() -> Scene:
    return load_scene(sample_course_path())


# -- validation --------------------------------------------------------------

def _inside_box(p: Point2, box: BoxObstacle) -> bool:
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    dx, dy = p[0] - box.center[0], p[1] - box.center[1]
    lx, ly = c * dx + s * dy, -s * dx + c * dy
    return abs(lx) <= box.half_extents[0] and abs(ly) <= box.half_extents[1]


def validate_scene(scene: Scene) -> List[str]:
    """Every invariant violation in ``scene``; an empty list means valid."""
    out: List[str] = []
    g = scene.geo
    if not -90.0 <= g.lat0 <= 90.0:
        out.append(f"geo.lat0 {g.lat0} outside [-90, 90]")
    elif abs(g.lat0) >= 89.0:
        out.append(f"geo.lat0 {g.lat0}: |lat0| must be < 89")
    if not -180.0 <= g.lon0 <= 180.0:
        out.append(f"geo.lon0 {g.lon0} outside [-180, 180]")

    t = scene.terrain
    if any(not 0 <= c <= 255 for c in t.grass_base):
        out.append(f"terrain.grass_base {t.grass_base} not RGB8")
    if not 0.0 <= t.noise_amplitude <= 1.0:
        out.append(f"terrain.noise_amplitude {t.noise_amplitude} outside [0, 1]")
    if not t.noise_scale > 0.0:
        out.append(f"terrain.noise_scale {t.noise_scale} must be > 0")

    for i, ln in enumerate(scene.lines):
        if len(ln.points) < 2:
            out.append(f"lines[{i}]: needs at least 2 points")
        if any(ln.points[k] == ln.points[k + 1] for k in range(len(ln.points) - 1)):
            out.append(f"lines[{i}]: degenerate polyline (repeated consecutive point)")
        if not ln.width > 0.0:
            out.append(f"lines[{i}]: width {ln.width} must be > 0")
        if not 0.0 <= ln.intensity <= 1.0:
            out.append(f"lines[{i}]: intensity {ln.intensity} outside [0, 1]")

    for i, b in enumerate(scene.barrels):
        if not b.radius > 0.0:
            out.append(f"barrels[{i}]: radius {b.radius} must be > 0")
        if not b.height > 0.0:
            out.append(f"barrels[{i}]: height {b.height} must be > 0")
    for i, b in enumerate(scene.boxes):
        if not (b.half_extents[0] > 0.0 and b.half_extents[1] > 0.0):
            out.append(f"boxes[{i}]: half extents {b.half_extents} must be > 0")
        if not b.height > 0.0:
            out.append(f"boxes[{i}]: height {b.height} must be > 0")

    sp = (scene.spawn.x, scene.spawn.y)
    for i, b in enumerate(scene.barrels):
        if math.hypot(sp[0] - b.center[0], sp[1] - b.center[1]) <= abs(b.radius):
            out.append(f"spawn overlaps obstacle barrels[{i}]")
    for i, b in enumerate(scene.boxes):
        if _inside_box(sp, b):
            out.append(f"spawn overlaps obstacle boxes[{i}]")

    if scene.goal is not None and not scene.goal.radius > 0.0:
        out.append(f"goal.radius {scene.goal.radius} must be > 0")
    return out


def on_paint(scene: Scene, p: Point2) -> bool:
    """Reference line-membership test built on the scalar geometry."""
    return any(point_band_distance(p, ln) <= ln.width / 2.0 for ln in scene.lines)
