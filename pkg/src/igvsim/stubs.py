"""Non-simulation implementations of the sensor and motor roles.

``StubSensor``/``StubMotorController`` stand in for physical hardware drivers.
``StreamRecorder`` captures what a control loop saw each cycle, and
``ReplaySession`` plays such a recording back through stub roles, advancing one
cycle per motor command, so the loop's decisions can be compared with the
live run.
"""

from __future__ import annotations

import threading
from pathlib import Path
from typing import Callable, List, Optional, Union

from . import wire
from .messages import MotorCommand
from .nav import CycleInputs
from .roles import MotorControllerRole, SensorRole
from .wire import ChannelKind

_TAGS = {b"L": ChannelKind.LIDAR, b"C": ChannelKind.CAMERA, b"G": ChannelKind.GPS}
_END = b"E"


class StubSensor(SensorRole):
    """A sensor fed by calling :meth:`push` (e.g. from a hardware driver or a test)."""

    def __init__(self, kind: str = "sensor"):
        super().__init__()
        self.kind = kind
        self.initialized = False

    def initialize(self, endpoint=None) -> None:
        self.initialized = True

    def push(self, value) -> int:
        if self.closed:
            raise RuntimeError(f"{self.kind} stub is closed")
        return self.publish(value)


class StubMotorController(MotorControllerRole):
    """Records every command; optionally calls ``on_command(cmd)`` after each one."""

    def __init__(self, on_command: Optional[Callable[[MotorCommand], None]] = None):
        self.commands: List[MotorCommand] = []
        self.on_command = on_command
        self.initialized = False
        self._closed = False

    def initialize(self, endpoint=None) -> None:
        self.initialized = True

    def set_speeds(self, linear: float, angular: float) -> None:
        if self._closed:
            return
        cmd = MotorCommand(float(linear), float(angular))
        self.commands.append(cmd)
        if self.on_command is not None:
            self.on_command(cmd)

    @property
    def closed(self) -> bool:
        return self._closed

    def close(self) -> None:
        self._closed = True


class StreamRecorder:
    """Writes each cycle's inputs as tagged wire frames: L/C/G payloads then an E marker."""

    def __init__(self, path: Union[str, Path]):
        self._fh = open(path, "wb")
        self._lock = threading.Lock()

    def record(self, inputs: CycleInputs) -> None:
        parts = [b"L" + wire.encode_payload(ChannelKind.LIDAR, inputs.lidar)]
        if inputs.camera is not None:
            parts.append(b"C" + wire.encode_payload(ChannelKind.CAMERA, inputs.camera))
        if inputs.gps is not None:
            parts.append(b"G" + wire.encode_payload(ChannelKind.GPS, inputs.gps))
        parts.append(_END)
        with self._lock:
            for p in parts:
                self._fh.write(wire.frame_write(p))

    def close(self) -> None:
        with self._lock:
            if not self._fh.closed:
                self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_recording(path: Union[str, Path]) -> List[dict]:
    """Cycles of a recording as dicts mapping channel kind to decoded value."""
    cycles, current = [], {}
    with open(path, "rb") as fh:
        while True:
            payload = wire.frame_read(fh.read)
            if payload is None:
                break
            tag, body = payload[:1], payload[1:]
            if tag == _END:
                if ChannelKind.LIDAR not in current:
                    raise wire.DecodeError("recorded cycle has no lidar scan")
                cycles.append(current)
                current = {}
            elif tag in _TAGS:
                current[_TAGS[tag]] = wire.decode_payload(_TAGS[tag], body)
            else:
                raise wire.DecodeError(f"unknown record tag {tag!r}")
    if current:
        raise wire.TruncatedStream("recording ends inside a cycle")
    return cycles


class ReplaySession:
    """Stub sensors that replay a recording, one cycle per ``set_speeds`` call.

    After the last cycle has been answered the sensors close, which ends the
    control loop the same way a simulator disconnect would.
    """

    def __init__(self, cycles: List[dict]):
        self.cycles = cycles
        kinds = {k for c in cycles for k in c}
        self.lidar = StubSensor("lidar")
        self.camera = StubSensor("camera") if ChannelKind.CAMERA in kinds else None
        self.gps = StubSensor("gps") if ChannelKind.GPS in kinds else None
        self.motor = StubMotorController(on_command=self._advance)
        self._next = 0

    @classmethod
    def from_file(cls, path) -> "ReplaySession":
        return cls(read_recording(path))

    @property
    def sensors(self) -> dict:
        out = {"lidar": self.lidar}
        if self.camera is not None:
            out["camera"] = self.camera
        if self.gps is not None:
            out["gps"] = self.gps
        return out

    def start(self) -> None:
        for s in self.sensors.values():
            s.initialize()
        self.motor.initialize()
        self._advance(None)

    def _advance(self, _cmd) -> None:
        if self._next >= len(self.cycles):
            for s in self.sensors.values():
                s.close()
            return
        cycle = self.cycles[self._next]
        self._next += 1
        # publish secondary channels first so they are in place when the scan appears
        for kind, role in ((ChannelKind.CAMERA, self.camera), (ChannelKind.GPS, self.gps)):
            if role is not None and kind in cycle:
                role.push(cycle[kind])
        self.lidar.push(cycle[ChannelKind.LIDAR])

    @property
    def commands(self) -> List[MotorCommand]:
        return self.motor.commands
