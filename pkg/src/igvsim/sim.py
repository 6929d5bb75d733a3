"""Simulator runtime: the fixed-timestep world loop and the connection manager
that dials out to the listening robot software."""

from __future__ import annotations

import collections
import logging
import math
import os
import queue
import socket
import threading
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import wire
from .dynamics import DriveParams, MotorCommand, RobotState, step_world
from .scene import Scene, SceneError, load_scene, validate_scene
from .sensors import (FreshnessClock, SensorSuite, compass_from_pose, gps_from_pose, poll_due,
                      render_camera, scan_lidar)
from .wire import ChannelKind

log = logging.getLogger(__name__)

QUEUE_DEPTH = {ChannelKind.CAMERA: 2}
DEFAULT_QUEUE_DEPTH = 16
TRAJECTORY_COLUMNS = ("tick", "sim_time_s", "x_m", "y_m", "heading_rad", "v_mps", "w_radps",
                      "cmd_linear_mps", "cmd_angular_degps", "collided")


class ConnectionFailure(RuntimeError):
    def __init__(self, failed: Sequence[ChannelKind], detail: str = ""):
        self.failed = list(failed)
        names = ", ".join(k.value for k in self.failed)
        super().__init__(f"could not connect channel(s): {names}{detail}")


@dataclass(frozen=True)
class ChannelConfig:
    kind: ChannelKind
    port: int
    host: str = "127.0.0.1"


@dataclass
class SimConfig:
    scene_path: Optional[str] = None
    channels: List[ChannelConfig] = field(default_factory=list)
    tick_rate: float = 50.0
    pacing: str = "realtime"  # or "fast"
    duration: Optional[float] = None
    seed: int = 0
    drive: DriveParams = field(default_factory=DriveParams)
    sensors: SensorSuite = field(default_factory=SensorSuite)
    dump_trajectory: Optional[str] = None
    dump_frames: Optional[str] = None
    reconnect: bool = False
    connect_timeout: float = 10.0
    cmd_timeout: Optional[float] = None
    lockstep: bool = False
    lockstep_timeout: float = 10.0
    # (tick, command) pairs applied as if received at the start of that tick
    script: Sequence[Tuple[int, MotorCommand]] = ()

    def __post_init__(self):
        if not self.tick_rate > 0:
            raise ValueError("tick_rate must be > 0")
        if self.duration is not None and not self.duration > 0:
            raise ValueError("duration must be > 0 when bounded")
        if self.pacing not in ("realtime", "fast"):
            raise ValueError("pacing must be 'realtime' or 'fast'")
        ports = [c.port for c in self.channels]
        if len(set(ports)) != len(ports):
            raise ValueError("channel ports must be distinct")


@dataclass
class ChannelStats:
    enqueued: int = 0
    sent: int = 0
    dropped: int = 0
    closed: bool = False


@dataclass
class SimReport:
    ticks: int = 0
    sim_time: float = 0.0
    wall_time: float = 0.0
    messages: Dict[str, ChannelStats] = field(default_factory=dict)
    commands_received: int = 0
    command_decode_errors: int = 0
    collision_ticks: int = 0
    goal_reached: bool = False
    goal_time: Optional[float] = None
    stopped_by: str = ""

    @property
    def realtime_factor(self) -> float:
        return self.sim_time / self.wall_time if self.wall_time > 0 else math.inf

    @property
    def closed_channels(self) -> List[str]:
        return [k for k, s in self.messages.items() if s.closed]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["realtime_factor"] = self.realtime_factor
        d["closed_channels"] = self.closed_channels
        return d


# -- connections ---------------------------------------------------------------

def _dial(cfg: ChannelConfig, deadline: float) -> Optional[socket.socket]:
    while True:
        try:
            s = socket.create_connection((cfg.host, cfg.port), timeout=max(0.05, deadline - time.monotonic()))
            s.settimeout(None)
            s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            return s
        except OSError:
            if time.monotonic() >= deadline:
                return None
            time.sleep(0.05)


class _Outbound:
    """One simulator-to-client channel: a bounded drop-oldest queue and a sender thread."""

    def __init__(self, cfg: ChannelConfig, sock: socket.socket, depth: int, reconnect: bool):
        self.cfg = cfg
        self.sock: Optional[socket.socket] = sock
        self.q: collections.deque = collections.deque()
        self.depth = depth
        self.cond = threading.Condition()
        self.stats = ChannelStats()
        self.reconnect = reconnect
        self._stopping = False
        self._busy = False
        self.thread = threading.Thread(target=self._run, name=f"send-{cfg.kind.value}", daemon=True)
        self.thread.start()

    def enqueue(self, frame: bytes) -> None:
        with self.cond:
            if self.stats.closed:
                return
            self.stats.enqueued += 1
            if len(self.q) >= self.depth:
                self.q.popleft()
                self.stats.dropped += 1
            self.q.append(frame)
            self.cond.notify()

    def _run(self):
        while True:
            with self.cond:
                while not self.q and not self._stopping:
                    self.cond.wait()
                if not self.q:
                    return
                frame = self.q.popleft()
                self._busy = True
            try:
                self.sock.sendall(frame)
                self.stats.sent += 1
            except OSError as e:
                if not self._on_error(e):
                    return
            finally:
                with self.cond:
                    self._busy = False
                    self.cond.notify_all()

    def _on_error(self, err: OSError) -> bool:
        log.warning("channel %s closed: %s", self.cfg.kind.value, err)
        _close_quietly(self.sock)
        if self.reconnect and not self._stopping:
            sock = _dial(self.cfg, time.monotonic() + 1.0)
            if sock is not None:
                log.info("channel %s reconnected", self.cfg.kind.value)
                self.sock = sock
                return True
        with self.cond:
            self.stats.closed = True
            self.q.clear()
        return False

    def flush(self, timeout: float) -> None:
        end = time.monotonic() + timeout
        with self.cond:
            while (self.q or self._busy) and not self.stats.closed:
                left = end - time.monotonic()
                if left <= 0:
                    break
                self.cond.wait(left)

    def close(self):
        with self.cond:
            self._stopping = True
            self.cond.notify_all()
        _close_quietly(self.sock, shutdown=True)


class _Inbound:
    """The motor channel: a reader thread feeding raw payloads into a queue."""

    def __init__(self, cfg: ChannelConfig, sock: socket.socket):
        self.cfg = cfg
        self.sock = sock
        self.q: "queue.SimpleQueue[Optional[bytes]]" = queue.SimpleQueue()
        self.stats = ChannelStats()
        self.protocol_errors = 0
        self.thread = threading.Thread(target=self._run, name="recv-motor", daemon=True)
        self.thread.start()

    def _run(self):
        try:
            while True:
                payload = wire.recv_frame(self.sock)
                if payload is None:
                    break
                self.q.put(payload)
        except wire.WireError as e:
            self.protocol_errors += 1
            log.warning("motor channel: %s", e)
        except OSError as e:
            log.warning("motor channel: %s", e)
        log.warning("channel motor closed")
        self.stats.closed = True
        self.q.put(None)

    def close(self):
        _close_quietly(self.sock, shutdown=True)


def _close_quietly(sock, shutdown=False):
    if sock is None:
        return
    try:
        if shutdown:
            sock.shutdown(socket.SHUT_RDWR)
    except OSError:
        pass
    try:
        sock.close()
    except OSError:
        pass


class ConnectionManager:
    """Owns one TCP connection per configured channel.

    The simulator is the TCP client: robot software listens, we connect.
    """

    def __init__(self, channels: Sequence[ChannelConfig], reconnect: bool = False):
        self.configs = list(channels)
        self.reconnect = reconnect
        self.out: Dict[ChannelKind, _Outbound] = {}
        self.motor: Optional[_Inbound] = None
        self._pending: collections.deque = collections.deque()

    def connect(self, timeout: float = 10.0) -> None:
        """Connect every channel, retrying refused connections until ``timeout``."""
        deadline = time.monotonic() + timeout
        socks, failed = {}, []
        for cfg in self.configs:
            s = _dial(cfg, deadline)
            if s is None:
                failed.append(cfg.kind)
            else:
                socks[cfg.kind] = s
        if failed:
            for s in socks.values():
                _close_quietly(s)
            raise ConnectionFailure(failed, f" (gave up after {timeout:g} s)")
        for cfg in self.configs:
            if cfg.kind is ChannelKind.MOTOR:
                self.motor = _Inbound(cfg, socks[cfg.kind])
            else:
                depth = QUEUE_DEPTH.get(cfg.kind, DEFAULT_QUEUE_DEPTH)
                self.out[cfg.kind] = _Outbound(cfg, socks[cfg.kind], depth, self.reconnect)
        log.info("connected %d channel(s)", len(self.configs))

    def has(self, kind: ChannelKind) -> bool:
        return kind in self.out

    def send(self, kind: ChannelKind, payload: bytes) -> None:
        ch = self.out.get(kind)
        if ch is not None:
            ch.enqueue(wire.frame_write(payload))

    @property
    def motor_open(self) -> bool:
        return self.motor is not None and not self.motor.stats.closed

    def drain_motor(self) -> List[bytes]:
        out = list(self._pending)
        self._pending.clear()
        if self.motor is not None:
            while True:
                try:
                    item = self.motor.q.get_nowait()
                except queue.Empty:
                    break
                if item is not None:
                    out.append(item)
        return out

    def wait_motor(self, timeout: float) -> bool:
        """Block until a motor frame is pending; False on timeout or closed channel."""
        if self._pending:
            return True
        if self.motor is None:
            return False
        try:
            item = self.motor.q.get(timeout=timeout)
        except queue.Empty:
            return False
        if item is None:
            return False
        self._pending.append(item)
        return True

    def stats(self) -> Dict[str, ChannelStats]:
        out = {k.value: ch.stats for k, ch in self.out.items()}
        if self.motor is not None:
            out[ChannelKind.MOTOR.value] = self.motor.stats
        return out

    def close(self, flush_timeout: float = 2.0) -> None:
        for ch in self.out.values():
            ch.flush(flush_timeout)
        for ch in self.out.values():
            ch.close()
        if self.motor is not None:
            self.motor.close()


class MemoryLink:
    """In-process stand-in for :class:`ConnectionManager` (tests, benchmarks).

    Outbound frames are counted and optionally kept; motor payloads are
    pushed with :meth:`push_motor`.
    """

    def __init__(self, kinds: Sequence[ChannelKind] = wire.SENSOR_KINDS, keep: bool = False):
        self.kinds = set(kinds)
        self.keep = keep
        self.sent: Dict[ChannelKind, list] = {k: [] for k in self.kinds}
        self._stats = {k: ChannelStats() for k in self.kinds}
        self._motor: collections.deque = collections.deque()
        self.motor_open = ChannelKind.MOTOR in self.kinds

    def has(self, kind):
        return kind in self.kinds and kind is not ChannelKind.MOTOR

    def send(self, kind, payload):
        st = self._stats[kind]
        st.enqueued += 1
        st.sent += 1
        if self.keep:
            self.sent[kind].append(payload)

    def push_motor(self, payload: bytes):
        self._motor.append(payload)

    def drain_motor(self):
        out = list(self._motor)
        self._motor.clear()
        return out

    def wait_motor(self, timeout):
        return bool(self._motor)

    def stats(self):
        return {k.value: s for k, s in self._stats.items()}

    def close(self, flush_timeout=0.0):
        pass


# -- world loop ----------------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


class Simulator:
    """World state plus the per-tick protocol: ingest commands, step, poll sensors, dump."""

    def __init__(self, scene: Scene, cfg: SimConfig, link):
        self.scene = scene
        self.cfg = cfg
        self.link = link
        self.dt = 1.0 / cfg.tick_rate
        self.state = RobotState(scene.spawn)
        self.tick_index = 0
        su = cfg.sensors
        self.clocks = {
            ChannelKind.LIDAR: FreshnessClock(su.lidar.rate),
            ChannelKind.GPS: FreshnessClock(su.gps_rate),
            ChannelKind.COMPASS: FreshnessClock(su.compass_rate),
            ChannelKind.CAMERA: FreshnessClock(su.camera.rate),
        }
        seeds = np.random.SeedSequence(cfg.seed).spawn(3)
        self.rng = {ChannelKind.LIDAR: np.random.default_rng(seeds[0]),
                    ChannelKind.GPS: np.random.default_rng(seeds[1]),
                    ChannelKind.COMPASS: np.random.default_rng(seeds[2])}
        self.report = SimReport()
        self.last_cmd_time = 0.0
        self.frames_written = 0
        self._script = collections.defaultdict(list)
        for k, cmd in cfg.script:
            self._script[int(k)].append(cmd)
        self._traj = None
        if cfg.dump_trajectory:
            self._traj = open(cfg.dump_trajectory, "w", encoding="ascii", newline="\n")
            self._traj.write(",".join(TRAJECTORY_COLUMNS) + "\n")
        if cfg.dump_frames:
            os.makedirs(cfg.dump_frames, exist_ok=True)

    @property
    def sim_time(self) -> float:
        return self.tick_index / self.cfg.tick_rate

    def _ingest(self) -> None:
        cmd = None
        for payload in self.link.drain_motor():
            try:
                cmd = wire.decode_payload(ChannelKind.MOTOR, payload)
                self.report.commands_received += 1
            except wire.DecodeError as e:
                self.report.command_decode_errors += 1
                log.debug("skipping motor frame: %s", e)
        for scripted in self._script.pop(self.tick_index, ()):
            cmd = scripted
            self.report.commands_received += 1
        if cmd is not None:
            self.state = RobotState(self.state.pose, self.state.v, self.state.w, cmd, self.state.collided)
            self.last_cmd_time = self.sim_time
        elif (self.cfg.cmd_timeout is not None
              and self.sim_time - self.last_cmd_time > self.cfg.cmd_timeout
              and self.state.commanded != MotorCommand()):
            log.info("no motor command for %.2f s, stopping", self.cfg.cmd_timeout)
            self.state = RobotState(self.state.pose, self.state.v, self.state.w, MotorCommand(),
                                    self.state.collided)

    def tick(self) -> Dict[ChannelKind, bool]:
        """Advance one step; returns which sensors fired."""
        self._ingest()
        poll_time = self.sim_time
        self.state = step_world(self.state, self.scene, self.cfg.drive, self.dt)
        self.tick_index += 1
        if self.state.collided:
            self.report.collision_ticks += 1

        fired = {}
        su = self.cfg.sensors
        for kind, clock in self.clocks.items():
            # clocks keep their cadence even for unconnected channels
            if not poll_due(clock, poll_time):
                continue
            fired[kind] = True
            if not self.link.has(kind):
                continue
            if kind is ChannelKind.LIDAR:
                value = scan_lidar(self.scene, self.state, su.lidar, self.rng[kind])
            elif kind is ChannelKind.GPS:
                value = gps_from_pose(self.state.pose, self.scene.geo, su.gps_noise_std, self.rng[kind])
            elif kind is ChannelKind.COMPASS:
                value = compass_from_pose(self.state.pose, su.compass_noise_std, self.rng[kind])
            else:
                value = render_camera(self.scene, self.state, su.camera)
                self._dump_frame(value)
            self.link.send(kind, wire.encode_payload(kind, value))

        if self._traj is not None:
            s, c = self.state, self.state.commanded
            self._traj.write(",".join((
                str(self.tick_index), _fmt(self.sim_time), _fmt(s.pose.x), _fmt(s.pose.y),
                _fmt(s.pose.heading), _fmt(s.v), _fmt(s.w), _fmt(c.linear), _fmt(c.angular),
                "1" if s.collided else "0")) + "\n")
        return fired

    def _dump_frame(self, frame) -> None:
        if not self.cfg.dump_frames:
            return
        path = Path(self.cfg.dump_frames) / f"frame_{self.frames_written:06d}.ppm"
        path.write_bytes(b"P6\n%d %d\n255\n" % (frame.width, frame.height) + frame.pixels)
        self.frames_written += 1

    def close(self):
        if self._traj is not None:
            self._traj.close()
            self._traj = None

    def run(self, stop: Optional[threading.Event] = None) -> SimReport:
        cfg = self.cfg
        max_ticks = None if cfg.duration is None else int(round(cfg.duration * cfg.tick_rate))
        goal = self.scene.goal
        awaiting = False
        t0 = time.monotonic()
        try:
            while max_ticks is None or self.tick_index < max_ticks:
                if stop is not None and stop.is_set():
                    self.report.stopped_by = "signal"
                    break
                if cfg.lockstep and awaiting and self.link.motor_open:
                    if not self.link.wait_motor(cfg.lockstep_timeout) and self.link.motor_open:
                        log.warning("lockstep: no motor command within %.1f s", cfg.lockstep_timeout)
                fired = self.tick()
                awaiting = fired.get(ChannelKind.LIDAR, False) and self.link.has(ChannelKind.LIDAR)
                if goal is not None and goal.contains(self.state.pose.x, self.state.pose.y):
                    self.report.goal_reached = True
                    self.report.goal_time = self.sim_time
                    self.report.stopped_by = "goal"
                    break
                if cfg.pacing == "realtime":
                    ahead = t0 + self.tick_index * self.dt - time.monotonic()
                    if ahead > 0:
                        time.sleep(ahead)
            else:
                self.report.stopped_by = "duration"
        finally:
            self.close()
        self.report.ticks = self.tick_index
        self.report.sim_time = self.sim_time
        self.report.wall_time = time.monotonic() - t0
        return self.report


def load_checked_scene(path) -> Scene:
    """Parse and validate a scene file; any problem raises :class:`SceneError`."""
    try:
        scene = load_scene(path)
    except OSError as e:
        raise SceneError(f"cannot read scene file: {e}") from e
    problems = validate_scene(scene)
    if problems:
        raise SceneError("invalid scene: " + "; ".join(problems))
    return scene


def run_simulation(cfg: SimConfig, scene: Optional[Scene] = None,
                   stop: Optional[threading.Event] = None, link=None) -> SimReport:
    """Connect all channels, then run the tick loop until duration, goal or ``stop``."""
    if scene is None:
        if cfg.scene_path is None:
            raise SceneError("no scene given")
        scene = load_checked_scene(cfg.scene_path)
    else:
        problems = validate_scene(scene)
        if problems:
            raise SceneError("invalid scene: " + "; ".join(problems))
    if cfg.lockstep and cfg.sensors.camera.rate != cfg.sensors.lidar.rate and any(
            c.kind is ChannelKind.CAMERA for c in cfg.channels):
        raise ValueError("lockstep needs equal lidar and camera rates")

    own_link = link is None
    if own_link:
        link = ConnectionManager(cfg.channels, reconnect=cfg.reconnect)
        link.connect(cfg.connect_timeout)
    sim = Simulator(scene, cfg, link)
    closed_during_run = set()
    try:
        report = sim.run(stop)
        # our own shutdown below also closes channels; only report those that dropped
        closed_during_run = {k for k, v in link.stats().items() if v.closed}
    finally:
        if own_link:
            link.close()
    report.messages = {k: replace(ChannelStats(**asdict(v)), closed=k in closed_during_run)
                       for k, v in link.stats().items()}
    log.info("simulation finished: %d ticks, %.2f s simulated, %.1fx real time, stopped by %s",
             report.ticks, report.sim_time, report.realtime_factor, report.stopped_by)
    return report
