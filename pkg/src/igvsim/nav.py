"""Demo reactive navigator: widest-gap following with a camera lane-line bias.

This module only sees :class:`~igvsim.roles.SensorRole` and
:class:`~igvsim.roles.MotorControllerRole`, so the same loop drives the
simulator or any other implementation of those roles.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import threading
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import IO, List, Optional, Tuple, Union

import numpy as np

from .messages import CameraFrame, GpsFix, LidarScan, MotorCommand
from .roles import MotorControllerRole, SensorRole

log = logging.getLogger(__name__)

LOG_COLUMNS = ("cycle", "wall_time", "lidar_seq", "min_front_range_m", "cmd_linear_mps",
               "cmd_angular_degps")


@dataclass(frozen=True)
class NavParams:
    v_nom: float = 0.8  # m/s
    d_safe: float = 1.2  # m, beams longer than this are free
    d_stop: float = 0.5  # m, front clearance at which forward speed reaches zero
    k_heading: float = 1.5  # 1/s, turn rate per radian of gap bearing
    w_cap: float = 60.0  # deg/s
    line_white_threshold: int = 200  # per RGB channel
    line_bias_gain: float = 30.0  # deg/s per unit of left/right white asymmetry
    fov_deg: float = 240.0  # must match the LIDAR that produces the scans
    front_half_angle_deg: float = 15.0

    def __post_init__(self):
        if not 0.0 < self.d_stop < self.d_safe:
            raise ValueError("NavParams needs 0 < d_stop < d_safe")
        for name in ("v_nom", "k_heading", "w_cap", "line_bias_gain", "fov_deg",
                     "front_half_angle_deg"):
            if not getattr(self, name) > 0:
                raise ValueError(f"NavParams.{name} must be > 0")
        if not 0 <= self.line_white_threshold <= 255:
            raise ValueError("NavParams.line_white_threshold must be in 0..255")

    @classmethod
    def from_file(cls, path) -> "NavParams":
        data = json.loads(Path(path).read_text())
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown navigation parameter(s): {', '.join(sorted(unknown))}")
        return cls(**data)


def beam_angles(n: int, fov_deg: float) -> np.ndarray:
    """Beam bearings in radians, beam 0 most clockwise; symmetric about 0 exactly."""
    step = math.radians(fov_deg) / (n - 1)
    return (np.arange(n) - (n - 1) / 2.0) * step


def free_gaps(free: np.ndarray) -> List[Tuple[int, int]]:
    """Inclusive (first, last) beam index of each contiguous run of free beams."""
    edges = np.diff(np.concatenate(([0], free.astype(np.int8), [0])))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1) - 1
    return list(zip(starts.tolist(), ends.tolist()))


def widest_gap(free: np.ndarray, fov_deg: float) -> Optional[Tuple[int, int, float]]:
    """(first, last, center bearing in rad) of the widest free gap, or None.

    Ties go to the gap whose center is nearest straight ahead, then to the more
    clockwise one.
    """
    n = len(free)
    step = math.radians(fov_deg) / (n - 1)
    best = None
    best_key = None
    for s, e in free_gaps(free):
        phi = ((s + e) / 2.0 - (n - 1) / 2.0) * step
        key = (-(e - s + 1), abs(phi), phi)
        if best_key is None or key < best_key:
            best, best_key = (s, e, phi), key
    return best


def front_clearance(ranges: np.ndarray, fov_deg: float, half_angle_deg: float) -> float:
    ang = beam_angles(len(ranges), fov_deg)
    front = np.abs(ang) <= math.radians(half_angle_deg) + 1e-12
    if not front.any():
        front = np.abs(ang) == np.abs(ang).min()
    return float(ranges[front].min())


def line_counts(frame: CameraFrame, threshold: int) -> Tuple[int, int]:
    """White-pixel counts in the left and right halves of the bottom third of the image."""
    img = frame.as_array()
    h, w = frame.height, frame.width
    bottom = img[h - h // 3:] if h >= 3 else img
    white = (bottom > threshold).all(axis=2)
    half = w // 2
    return int(white[:, :half].sum()), int(white[:, w - half:].sum())


def navigate_step(scan: LidarScan, frame: Optional[CameraFrame], fix: Optional[GpsFix],
                  params: NavParams = NavParams()) -> MotorCommand:
    """One reactive decision; a pure function of its arguments."""
    r = np.asarray(scan.ranges, dtype=float)
    if len(r) < 2:
        raise ValueError("scan needs at least two beams")
    w_cap = params.w_cap
    gap = widest_gap(r > params.d_safe, params.fov_deg)
    if gap is None:
        # boxed in: stop and rotate toward the longest beam
        ang = beam_angles(len(r), params.fov_deg)
        longest = np.flatnonzero(r == r.max())
        i = min(longest.tolist(), key=lambda k: (abs(ang[k]), ang[k]))
        return MotorCommand(0.0, -w_cap if ang[i] < 0 else w_cap)
    angular = max(-w_cap, min(w_cap, math.degrees(params.k_heading * gap[2])))
    clearance = front_clearance(r, params.fov_deg, params.front_half_angle_deg)
    scale = (clearance - params.d_stop) / (params.d_safe - params.d_stop)
    linear = params.v_nom * max(0.0, min(1.0, scale))
    if frame is not None:
        left, right = line_counts(frame, params.line_white_threshold)
        angular -= params.line_bias_gain * (left - right) / (left + right + 1)
    return MotorCommand(linear + 0.0, angular + 0.0)


@dataclass
class CycleInputs:
    """What one control cycle saw; enough to replay the decision."""

    cycle: int
    lidar: LidarScan
    lidar_seq: int
    camera: Optional[CameraFrame] = None
    gps: Optional[GpsFix] = None


@dataclass
class NavSummary:
    cycles: int = 0
    commands_sent: int = 0
    stopped_by: str = ""
    closed_channels: List[str] = field(default_factory=list)
    wall_time_s: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


class ControlLoop:
    """Read the latest sensor values, decide, command; at a fixed rate or in lockstep.

    In lockstep mode each cycle waits for a LIDAR scan newer than the last one
    (and, while the camera channel is live, a newer camera frame) and sends
    exactly one command per scan. Combined with the simulator's lockstep mode
    this makes closed-loop runs reproducible regardless of host speed.
    """

    def __init__(self, lidar: SensorRole, motor: MotorControllerRole,
                 camera: Optional[SensorRole] = None, gps: Optional[SensorRole] = None,
                 params: NavParams = NavParams(), control_rate: float = 20.0,
                 lockstep: bool = False, wait_timeout: float = 10.0,
                 log_file: Union[None, str, Path, IO[str]] = None, recorder=None):
        if control_rate <= 0:
            raise ValueError("control_rate must be > 0")
        self.lidar, self.motor, self.camera, self.gps = lidar, motor, camera, gps
        self.params = params
        self.period = 1.0 / control_rate
        self.lockstep = lockstep
        self.wait_timeout = wait_timeout
        self.recorder = recorder
        self.commands: List[MotorCommand] = []
        self._log_target = log_file
        self._last_lidar = 0
        self._last_camera = 0

    def _gather(self) -> Optional[CycleInputs]:
        if self.lockstep:
            scan = self.lidar.wait_newer(self._last_lidar, self.wait_timeout)
            if scan is None:
                return None
            cam = None
            if self.camera is not None:
                cam = self.camera.wait_newer(self._last_camera, self.wait_timeout)
                if cam is None:
                    cam = self.camera.latest()
        else:
            scan = self.lidar.latest()
            if scan is None or scan.seq == self._last_lidar and self.lidar.closed:
                return None
            cam = self.camera.latest() if self.camera is not None else None
        self._last_lidar = scan.seq
        if cam is not None:
            self._last_camera = cam.seq
        fix = self.gps.latest() if self.gps is not None else None
        return CycleInputs(0, scan.value, scan.seq, None if cam is None else cam.value,
                           None if fix is None else fix.value)

    def decide(self, inputs: CycleInputs) -> MotorCommand:
        return navigate_step(inputs.lidar, inputs.camera, inputs.gps, self.params)

    def _dead(self) -> Optional[str]:
        if self.lidar.closed and (self.lidar.latest() is None
                                  or self.lidar.latest().seq == self._last_lidar):
            return "lidar closed"
        if self.motor.closed:
            return "motor closed"
        return None

    def run(self, stop: Optional[threading.Event] = None,
            max_cycles: Optional[int] = None) -> NavSummary:
        stop = stop or threading.Event()
        summary = NavSummary()
        t0 = time.monotonic()
        own = isinstance(self._log_target, (str, Path))
        fh = open(self._log_target, "w", newline="") if own else self._log_target
        writer = csv.writer(fh) if fh is not None else None
        if writer is not None:
            writer.writerow(LOG_COLUMNS)
        next_due = t0
        try:
            while True:
                if stop.is_set():
                    summary.stopped_by = "signal"
                    break
                if max_cycles is not None and summary.cycles >= max_cycles:
                    summary.stopped_by = "max_cycles"
                    break
                dead = self._dead()
                if dead:
                    summary.stopped_by = "disconnect"
                    log.info("control loop ending: %s", dead)
                    break
                if not self.lockstep:
                    delay = next_due - time.monotonic()
                    if delay > 0 and stop.wait(delay):
                        continue
                    next_due = max(next_due + self.period, time.monotonic() - self.period)
                inputs = self._gather()
                if inputs is None:
                    continue
                inputs.cycle = summary.cycles
                cmd = self.decide(inputs)
                if self.recorder is not None:
                    self.recorder.record(inputs)
                self.motor.set_speeds(cmd.linear, cmd.angular)
                self.commands.append(cmd)
                summary.commands_sent += 1
                if writer is not None:
                    clearance = front_clearance(np.asarray(inputs.lidar.ranges, dtype=float),
                                                self.params.fov_deg,
                                                self.params.front_half_angle_deg)
                    writer.writerow([summary.cycles, f"{time.monotonic() - t0:.6f}",
                                     inputs.lidar_seq, repr(clearance), repr(cmd.linear),
                                     repr(cmd.angular)])
                summary.cycles += 1
        finally:
            if own and fh is not None:
                fh.close()
            elif fh is not None:
                fh.flush()
        summary.wall_time_s = time.monotonic() - t0
        summary.closed_channels = [name for name, role in
                                   (("lidar", self.lidar), ("camera", self.camera),
                                    ("gps", self.gps), ("motor", self.motor))
                                   if role is not None and role.closed]
        return summary


def run_navigation(sensors: dict, motor: MotorControllerRole, **kwargs) -> Tuple[NavSummary,
                                                                                   ControlLoop]:
    """Convenience wrapper: ``sensors`` maps channel names to roles (lidar required)."""
    by_name = {getattr(k, "value", k): v for k, v in sensors.items()}
    get = by_name.get
    lidar = get("lidar")
    if lidar is None:
        raise ValueError("navigation needs a lidar sensor")
    stop = kwargs.pop("stop", None)
    max_cycles = kwargs.pop("max_cycles", None)
    loop = ControlLoop(lidar, motor, camera=get("camera"), gps=get("gps"), **kwargs)
    return loop.run(stop=stop, max_cycles=max_cycles), loop
