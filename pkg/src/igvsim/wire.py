"""Payload encodings and length-prefixed framing for the per-channel TCP links.

Every frame is a 4-byte little-endian unsigned length followed by that many
payload bytes. Payload layouts (all little-endian):

    gps      f32 lat, f32 lon                          8 bytes
    compass  f32 heading_deg                           4 bytes
    lidar    u32 N, N x f32 range_m (beam 0 first)     4 + 4N bytes
    camera   u16 width, u16 height, RGB8 rows top-first 4 + 3wh bytes
    motor    f32 linear_mps, f32 angular_degps         8 bytes
"""

from __future__ import annotations

import enum
import math
import socket
import struct
from typing import Callable, Optional, Union

import numpy as np

from .messages import CameraFrame, GpsFix, HeadingReading, LidarScan, MotorCommand

MAX_FRAME = 16 * 1024 * 1024
_LEN = struct.Struct("<I")
_F2 = struct.Struct("<ff")
_F1 = struct.Struct("<f")
_CAM_HDR = struct.Struct("<HH")


class ChannelKind(str, enum.Enum):
    GPS = "gps"
    COMPASS = "compass"
    LIDAR = "lidar"
    CAMERA = "camera"
    MOTOR = "motor"

    @property
    def inbound(self) -> bool:
        """True for the client-to-simulator direction (motor only)."""
        return self is ChannelKind.MOTOR


SENSOR_KINDS = (ChannelKind.GPS, ChannelKind.COMPASS, ChannelKind.LIDAR, ChannelKind.CAMERA)


class WireError(Exception):
    pass


class ProtocolError(WireError):
    """A frame header that no conforming peer would send."""


class TruncatedStream(WireError):
    """The stream ended part-way through a frame."""


class DecodeError(WireError):
    """A payload that does not decode for its channel kind."""


Payload = Union[GpsFix, HeadingReading, LidarScan, CameraFrame, MotorCommand]


# -- framing -----------------------------------------------------------------

def frame_write(payload: bytes) -> bytes:
    n = len(payload)
    if n == 0 or n > MAX_FRAME:
        raise ProtocolError(f"payload length {n} outside 1..{MAX_FRAME}")
    return _LEN.pack(n) + bytes(payload)


def _read_exact(read: Callable[[int], bytes], n: int, started: bool) -> Optional[bytes]:
    buf = bytearray()
    while len(buf) < n:
        chunk = read(n - len(buf))
        if not chunk:
            if not buf and not started:
                return None
            raise TruncatedStream(f"stream closed after {len(buf)} of {n} bytes")
        buf += chunk
    return bytes(buf)


def frame_read(read: Callable[[int], bytes]) -> Optional[bytes]:
    """Read one frame payload from ``read(n)`` (a ``recv``-like callable).

    ``read`` may return fewer bytes than asked for; an empty result means end
    of stream. Returns None on a clean end of stream between frames.
    """
    hdr = _read_exact(read, 4, started=False)
    if hdr is None:
        return None
    (n,) = _LEN.unpack(hdr)
    if n == 0 or n > MAX_FRAME:
        raise ProtocolError(f"declared frame length {n} outside 1..{MAX_FRAME}")
    return _read_exact(read, n, started=True)


class FrameDecoder:
    """Incremental decoder: feed arbitrary chunks, collect whole payloads."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list:
        self._buf += data
        out = []
        while len(self._buf) >= 4:
            (n,) = _LEN.unpack_from(self._buf)
            if n == 0 or n > MAX_FRAME:
                raise ProtocolError(f"declared frame length {n} outside 1..{MAX_FRAME}")
            if len(self._buf) < 4 + n:
                break
            out.append(bytes(self._buf[4:4 + n]))
            del self._buf[:4 + n]
        return out

    @property
    def pending(self) -> int:
        return len(self._buf)


def recv_frame(sock: socket.socket) -> Optional[bytes]:
    return frame_read(sock.recv)


def send_frame(sock: socket.socket, payload: bytes) -> None:
    sock.sendall(frame_write(payload))


# -- payloads ----------------------------------------------------------------

def encode_payload(kind: ChannelKind, value, expected_beams: Optional[int] = None) -> bytes:
    kind = ChannelKind(kind)
    if kind is ChannelKind.GPS:
        return _F2.pack(value.lat, value.lon)
    if kind is ChannelKind.COMPASS:
        return _F1.pack(value.heading)
    if kind is ChannelKind.LIDAR:
        n = len(value.ranges)
        if expected_beams is not None and n != expected_beams:
            raise ValueError(f"lidar scan has {n} beams, configured for {expected_beams}")
        return _LEN.pack(n) + np.asarray(value.ranges, dtype="<f4").tobytes()
    if kind is ChannelKind.CAMERA:
        if len(value.pixels) != value.width * value.height * 3:
            raise ValueError("camera pixel buffer size does not match width*height*3")
        return _CAM_HDR.pack(value.width, value.height) + bytes(value.pixels)
    if kind is ChannelKind.MOTOR:
        return _F2.pack(value.linear, value.angular)
    raise ValueError(f"unknown channel kind {kind!r}")


def _need(data: bytes, n: int, kind: ChannelKind) -> None:
    if len(data) != n:
        raise DecodeError(f"{kind.value} payload must be {n} bytes, got {len(data)}")


def _finite(vals, kind: ChannelKind):
    if not all(math.isfinite(v) for v in vals):
        raise DecodeError(f"{kind.value} payload contains a non-finite value")
    return vals


def decode_payload(kind: ChannelKind, data: bytes) -> Payload:
    """Inverse of :func:`encode_payload`. Raises :class:`DecodeError` on any malformed input."""
    kind = ChannelKind(kind)
    data = bytes(data)
    if kind is ChannelKind.GPS:
        _need(data, 8, kind)
        return GpsFix(*_finite(_F2.unpack(data), kind))
    if kind is ChannelKind.COMPASS:
        _need(data, 4, kind)
        return HeadingReading(*_finite(_F1.unpack(data), kind))
    if kind is ChannelKind.LIDAR:
        if len(data) < 4:
            raise DecodeError(f"lidar payload too short ({len(data)} bytes)")
        (n,) = _LEN.unpack_from(data)
        _need(data, 4 + 4 * n, kind)
        ranges = np.frombuffer(data, dtype="<f4", offset=4)
        if n == 0 or not np.isfinite(ranges).all():
            raise DecodeError("lidar scan is empty or contains a non-finite range")
        return LidarScan(tuple(ranges.astype(float).tolist()))
    if kind is ChannelKind.CAMERA:
        if len(data) < 4:
            raise DecodeError(f"camera payload too short ({len(data)} bytes)")
        w, h = _CAM_HDR.unpack_from(data)
        _need(data, 4 + 3 * w * h, kind)
        if w == 0 or h == 0:
            raise DecodeError("camera frame has zero size")
        return CameraFrame(w, h, data[4:])
    if kind is ChannelKind.MOTOR:
        _need(data, 8, kind)
        return MotorCommand(*_finite(_F2.unpack(data), kind))
    raise DecodeError(f"unknown channel kind {kind!r}")


def try_decode(kind: ChannelKind, data: bytes) -> Optional[Payload]:
    try:
        return decode_payload(kind, data)
    except DecodeError:
        return None


def encoded_size(kind: ChannelKind, *, beams: int = 0, width: int = 0, height: int = 0) -> int:
    kind = ChannelKind(kind)
    return {ChannelKind.GPS: 8, ChannelKind.COMPASS: 4, ChannelKind.LIDAR: 4 + 4 * beams,
            ChannelKind.CAMERA: 4 + 3 * width * height, ChannelKind.MOTOR: 8}[kind]
