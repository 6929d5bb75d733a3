"""Simulation-backed sensor and motor-controller roles.

The robot software listens on one TCP port per channel; the simulator dials
in. Each sensor channel runs a reader thread that hands every complete frame
payload to :meth:`SimulationSensorBase.message_received`, which decodes it and
replaces the channel's latest value.
"""

from __future__ import annotations

import errno
import logging
import math
import selectors
import socket
import threading
import time
from typing import Dict, Mapping, Optional, Tuple, Union

from . import wire
from .messages import MotorCommand
from .roles import MotorControllerRole, SensorRole
from .wire import ChannelKind

log = logging.getLogger(__name__)

Endpoint = Union[int, Tuple[str, int], None]


class StartupError(RuntimeError):
    """Listening or accepting failed; ``channels`` names the channels involved."""

    def __init__(self, message: str, channels=()):
        super().__init__(message)
        self.channels = [ChannelKind(c) for c in channels]


def _endpoint(endpoint: Endpoint, default_host: str) -> Tuple[str, int]:
    if endpoint is None:
        return default_host, 0
    if isinstance(endpoint, int):
        return default_host, endpoint
    host, port = endpoint
    return host, int(port)


def _listen(kind: ChannelKind, host: str, port: int) -> socket.socket:
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        sock.bind((host, port))
        sock.listen(1)
    except OSError as e:
        sock.close()
        if e.errno == errno.EADDRINUSE:
            raise StartupError(f"{kind.value} port {port} is already in use", [kind]) from e
        raise StartupError(f"cannot listen for {kind.value} on {host}:{port}: {e}", [kind]) from e
    return sock


def _close(sock: Optional[socket.socket]) -> None:
    if sock is None:
        return
    try:
        sock.shutdown(socket.SHUT_RDWR)
    except OSError:
        pass
    try:
        sock.close()
    except OSError:
        pass


class _Listening:
    """Listener/connection bookkeeping shared by sensor and motor channels."""

    kind: ChannelKind
    default_host = "0.0.0.0"

    def _init_listener(self) -> None:
        self._listener: Optional[socket.socket] = None
        self._conn: Optional[socket.socket] = None
        self._io_lock = threading.Lock()
        self._shut = False

    def _open(self, endpoint: Endpoint) -> None:
        if self._listener is not None:
            raise RuntimeError(f"{self.kind.value} channel already initialized")
        host, port = _endpoint(endpoint, self.default_host)
        self._listener = _listen(self.kind, host, port)

    @property
    def port(self) -> int:
        if self._listener is None:
            raise RuntimeError("channel not initialized")
        return self._listener.getsockname()[1]

    @property
    def listener(self) -> Optional[socket.socket]:
        return self._listener

    @property
    def connected(self) -> bool:
        return self._conn is not None

    def accept(self, timeout: Optional[float] = None) -> None:
        """Wait for the simulator to connect, then start serving the connection."""
        if self._listener is None:
            raise RuntimeError("call initialize() before accept()")
        self._listener.settimeout(timeout)
        try:
            conn, _ = self._listener.accept()
        except socket.timeout:
            raise StartupError(f"{self.kind.value} channel: no connection within {timeout} s",
                               [self.kind]) from None
        finally:
            if self._listener is not None:
                self._listener.settimeout(None)
        self.attach(conn)

    def attach(self, conn: socket.socket) -> None:
        """Serve an already-connected socket (also used by tests with socket pairs)."""
        conn.settimeout(None)
        if conn.family in (socket.AF_INET, socket.AF_INET6):
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        with self._io_lock:
            self._conn = conn
        # one connection per channel: stop listening once it is established
        _close(self._listener)
        self._listener = None
        self._start()

    def _start(self) -> None:
        raise NotImplementedError

    def _shutdown_io(self) -> None:
        with self._io_lock:
            if self._shut:
                return
            self._shut = True
            conn, self._conn = self._conn, None
        _close(self._listener)
        self._listener = None
        _close(conn)


class SimulationSensorBase(_Listening, SensorRole):
    """A sensor whose readings arrive as frames from the simulator.

    Subclasses set :attr:`kind`; they may override :meth:`message_received`
    to interpret payloads differently. The hook is called exactly once per
    complete frame, from the channel's reader thread.
    """

    kind: ChannelKind

    def __init__(self):
        SensorRole.__init__(self)
        self._init_listener()
        self._reader: Optional[threading.Thread] = None
        self.frames_received = 0
        self.malformed = 0

    def initialize(self, endpoint: Endpoint = None) -> None:
        """Open the listening socket. ``endpoint`` is a port or ``(host, port)``."""
        self._open(endpoint)

    def decode(self, payload: bytes):
        return wire.decode_payload(self.kind, payload)

    def message_received(self, payload: bytes) -> None:
        """Decode ``payload`` and make it the latest value; malformed payloads are skipped."""
        try:
            value = self.decode(payload)
        except wire.DecodeError as e:
            self.malformed += 1
            log.warning("%s: skipping malformed message: %s", self.kind.value, e)
            return
        self.publish(value)

    def _start(self) -> None:
        self._reader = threading.Thread(target=self._read_loop, name=f"igvnav-{self.kind.value}",
                                        daemon=True)
        self._reader.start()

    def _read_loop(self) -> None:
        conn = self._conn
        reason = "simulator closed the connection"
        try:
            while True:
                payload = wire.frame_read(conn.recv)
                if payload is None:
                    break
                self.frames_received += 1
                try:
                    self.message_received(payload)
                except Exception:  # a buggy hook must not kill the channel
                    self.malformed += 1
                    log.exception("%s: message hook failed", self.kind.value)
        except wire.WireError as e:
            reason = f"stream error: {e}"
        except OSError as e:
            reason = f"socket error: {e}"
        if not self._shut:
            log.warning("%s channel closed (%s)", self.kind.value, reason)
        self._finish()

    def _finish(self) -> None:
        self._shutdown_io()
        SensorRole.close(self)

    def close(self) -> None:
        self._finish()
        reader = self._reader
        if reader is not None and reader is not threading.current_thread():
            reader.join(timeout=2.0)


class SimulationGPS(SimulationSensorBase):
    kind = ChannelKind.GPS


class SimulationCompass(SimulationSensorBase):
    kind = ChannelKind.COMPASS


class SimulationLidar(SimulationSensorBase):
    kind = ChannelKind.LIDAR


class SimulationCamera(SimulationSensorBase):
    kind = ChannelKind.CAMERA


class SimulationMotorController(_Listening, MotorControllerRole):
    """Sends motor commands to the simulator over the motor channel."""

    kind = ChannelKind.MOTOR

    def __init__(self):
        self._init_listener()
        self._closed = threading.Event()
        self._watch: Optional[threading.Thread] = None
        self.commands_sent = 0

    def initialize(self, endpoint: Endpoint = None) -> None:
        self._open(endpoint)

    def _start(self) -> None:
        # The simulator never writes on this channel; reading only detects its departure.
        self._watch = threading.Thread(target=self._watch_loop, name="igvnav-motor", daemon=True)
        self._watch.start()

    def _watch_loop(self) -> None:
        conn = self._conn
        try:
            while conn.recv(4096):
                pass
        except OSError:
            pass
        if not self._shut:
            log.warning("motor channel closed (simulator closed the connection)")
        self._mark_closed()

    def _mark_closed(self) -> None:
        self._closed.set()
        self._shutdown_io()

    @property
    def closed(self) -> bool:
        return self._closed.is_set()

    def set_speeds(self, linear: float, angular: float) -> None:
        if not (math.isfinite(linear) and math.isfinite(angular)):
            raise ValueError("motor speeds must be finite")
        if self.closed:
            return
        frame = wire.frame_write(wire.encode_payload(ChannelKind.MOTOR,
                                                     MotorCommand(float(linear), float(angular))))
        with self._io_lock:
            conn = self._conn
            if conn is None:
                raise RuntimeError("motor channel is not connected")
            try:
                conn.sendall(frame)
                self.commands_sent += 1
                return
            except OSError as e:
                err = e
        log.warning("motor channel closed (%s)", err)
        self._mark_closed()

    def close(self) -> None:
        self._mark_closed()
        watch = self._watch
        if watch is not None and watch is not threading.current_thread():
            watch.join(timeout=2.0)


SENSOR_CLASSES = {
    ChannelKind.GPS: SimulationGPS,
    ChannelKind.COMPASS: SimulationCompass,
    ChannelKind.LIDAR: SimulationLidar,
    ChannelKind.CAMERA: SimulationCamera,
}


class ChannelSet:
    """The live channels of one robot-software session."""

    def __init__(self, sensors: Dict[ChannelKind, SensorRole], motor: Optional[MotorControllerRole]):
        self.sensors = dict(sensors)
        self.motor = motor

    def sensor(self, kind) -> Optional[SensorRole]:
        return self.sensors.get(ChannelKind(kind))

    def closed_channels(self):
        out = [k.value for k, s in self.sensors.items() if s.closed]
        if self.motor is not None and self.motor.closed:
            out.append(ChannelKind.MOTOR.value)
        return out

    def close(self) -> None:
        for s in self.sensors.values():
            s.close()
        if self.motor is not None:
            self.motor.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def serve_and_accept(ports: Mapping, host: str = "0.0.0.0",
                     accept_timeout: Optional[float] = 30.0, on_listening=None) -> ChannelSet:
    """Listen on every configured port, then wait for the simulator to connect each one.

    ``ports`` maps channel kinds (or their names) to TCP ports. All ports are
    bound before any accept, so a busy port is reported immediately.
    ``on_listening()`` is called once every port is bound.
    """
    wanted = {ChannelKind(k): int(p) for k, p in ports.items()}
    if len(set(wanted.values())) != len(wanted):
        raise StartupError("channel ports must be distinct", list(wanted))
    channels: Dict[ChannelKind, _Listening] = {}
    try:
        for kind, port in wanted.items():
            ch = SimulationMotorController() if kind is ChannelKind.MOTOR else SENSOR_CLASSES[kind]()
            ch.initialize((host, port))
            channels[kind] = ch
        if on_listening is not None:
            on_listening()
        _accept_all(channels, accept_timeout)
    except BaseException:
        for ch in channels.values():
            ch.close()
        raise
    sensors = {k: c for k, c in channels.items() if k is not ChannelKind.MOTOR}
    return ChannelSet(sensors, channels.get(ChannelKind.MOTOR))


def _accept_all(channels: Mapping[ChannelKind, _Listening], timeout: Optional[float]) -> None:
    deadline = None if timeout is None else time.monotonic() + timeout
    sel = selectors.DefaultSelector()
    try:
        for kind, ch in channels.items():
            sel.register(ch.listener, selectors.EVENT_READ, kind)
        pending = set(channels)
        while pending:
            remaining = None if deadline is None else deadline - time.monotonic()
            if remaining is not None and remaining <= 0:
                names = ", ".join(k.value for k in sorted(pending, key=list(channels).index))
                raise StartupError(f"no simulator connection on channel(s): {names}", pending)
            for key, _ in sel.select(remaining):
                kind = key.data
                sel.unregister(key.fileobj)
                conn, _ = key.fileobj.accept()
                channels[kind].attach(conn)
                pending.discard(kind)
                log.info("%s channel connected", kind.value)
    finally:
        sel.close()
